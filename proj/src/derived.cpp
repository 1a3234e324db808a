#include "stagewalk/derived.hpp"

#include <cmath>
#include <string>

namespace stagewalk {

namespace {

// Below this b*lambda the closed-form second moment cancels badly.
constexpr double kDirectSumBelow = 0.05;
constexpr int kDirectSumMaxThreshold = 1000000;

void require_positive(double rate, double interval, int threshold) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw Error(ErrorCode::NonPositiveRate, "rate must be positive");
  if (!(interval > 0.0)) throw Error(ErrorCode::InvalidArgument, "record interval must be positive");
  if (threshold < 1) throw Error(ErrorCode::InvalidArgument, "removal threshold must be >= 1");
}

void require_nonnegative(double rate, double interval, int threshold) {
  if (!(rate >= 0.0)) throw Error(ErrorCode::NonPositiveRate, "rate must be nonnegative");
  if (!(interval > 0.0)) throw Error(ErrorCode::InvalidArgument, "record interval must be positive");
  if (threshold < 1) throw Error(ErrorCode::InvalidArgument, "removal threshold must be >= 1");
}

void require_stage(int stage, int stages) {
  if (stages < 2 || stage < 0 || stage > stages - 2) {
    throw Error(ErrorCode::StageOutOfRange,
                "stage " + std::to_string(stage) + " outside 0.." + std::to_string(stages - 2));
  }
}

// P(move before removal) = 1 - e^{-n b lambda}.
double move_before_removal(double rate, double interval, int threshold) {
  return -std::expm1(-threshold * interval * rate);
}

// Sums of (u+1)^k P(u) over the conditional law, k = 1, 2.
struct DirectSums {
  double mean = 0.0;
  double second = 0.0;
  double variance = 0.0;
};

DirectSums direct_sums(double x, int n) {
  const double p = -std::expm1(-x);
  const double q = std::exp(-x);
  DirectSums s;
  double qu = 1.0;
  for (int u = 0; u <= n; ++u) {
    const double prob = u < n ? qu * p : qu;
    s.mean += (u + 1.0) * prob;
    s.second += (u + 1.0) * (u + 1.0) * prob;
    qu *= q;
  }
  qu = 1.0;
  for (int u = 0; u <= n; ++u) {
    const double prob = u < n ? qu * p : qu;
    const double dev = u + 1.0 - s.mean;
    s.variance += dev * dev * prob;
    qu *= q;
  }
  return s;
}

bool use_direct(double x, int n) { return x < kDirectSumBelow && n <= kDirectSumMaxThreshold; }

double advance_or_zero(double rate, double interval, int threshold, Convention convention) {
  return rate == 0.0 ? 0.0 : stage_advance_factor(rate, interval, threshold, convention);
}

}  // namespace

double stage_advance_factor(double rate, double interval, int threshold, Convention convention) {
  require_positive(rate, interval, threshold);
  const double x = interval * rate;
  const double per_interval = convention == Convention::Corrected ? x : rate;
  return per_interval * std::exp(-x) * move_before_removal(rate, interval, threshold);
}

double process_exact_advance_factor(double rate, double interval, int threshold) {
  require_positive(rate, interval, threshold);
  const double x = interval * rate;
  return x * std::exp(-x) * move_before_removal(rate, interval, threshold) / -std::expm1(-x);
}

double reach_probability(double rate, double interval, int threshold, int stage, int stages,
                         Convention convention) {
  require_stage(stage, stages);
  if (stage == 0) {
    require_positive(rate, interval, threshold);
    return 1.0;
  }
  return std::pow(stage_advance_factor(rate, interval, threshold, convention), stage);
}

double final_reach_probability(double rate, double interval, int threshold, int stages, int from_stage,
                               Convention convention) {
  require_stage(from_stage, stages);
  const double a = stage_advance_factor(rate, interval, threshold, convention);
  return std::pow(a, stages - 2 - from_stage) * move_before_removal(rate, interval, threshold);
}

double StayPmf::sum() const {
  double s = 0.0;
  for (double p : probabilities) s += p;
  return s;
}

std::vector<double> conditional_stay_pmf(double rate, double interval, int threshold) {
  require_nonnegative(rate, interval, threshold);
  const double x = interval * rate;
  const double p = -std::expm1(-x);
  std::vector<double> out(static_cast<std::size_t>(threshold) + 1);
  for (int v = 0; v < threshold; ++v) out[static_cast<std::size_t>(v)] = std::exp(-v * x) * p;
  out[static_cast<std::size_t>(threshold)] = std::exp(-threshold * x);
  return out;
}

StayPmf stay_pmf(double rate, double interval, int threshold, int stage, Convention convention) {
  if (stage < 0) throw Error(ErrorCode::StageOutOfRange, "stage must be nonnegative");
  require_positive(rate, interval, threshold);
  StayPmf out{rate, interval, threshold, stage, convention, {}, true};
  const double reach = stage == 0 ? 1.0 : std::pow(stage_advance_factor(rate, interval, threshold, convention), stage);
  out.proper = reach <= 1.0;
  out.probabilities.reserve(static_cast<std::size_t>(threshold) + 2);
  out.probabilities.push_back(1.0 - reach);
  for (double p : conditional_stay_pmf(rate, interval, threshold)) out.probabilities.push_back(p * reach);
  return out;
}

double cond_mean_records(double rate, double interval, int threshold) {
  require_nonnegative(rate, interval, threshold);
  if (rate == 0.0) return threshold + 1.0;
  const double x = interval * rate;
  if (std::isinf(x)) return 1.0;
  if (use_direct(x, threshold)) return direct_sums(x, threshold).mean;
  return std::expm1(-(threshold + 1.0) * x) / std::expm1(-x);
}

double cond_second_moment(double rate, double interval, int threshold) {
  require_nonnegative(rate, interval, threshold);
  const double n = threshold;
  if (rate == 0.0) return (n + 1.0) * (n + 1.0);
  const double x = interval * rate;
  if (std::isinf(x)) return 1.0;
  if (use_direct(x, threshold)) return direct_sums(x, threshold).second;
  const double q = std::exp(-x);
  const double denom = std::expm1(-x) * std::expm1(-x);
  return (1.0 + q - (2.0 * n + 3.0) * std::exp(-(n + 1.0) * x) + (2.0 * n + 1.0) * std::exp(-(n + 2.0) * x)) /
         denom;
}

double cond_var_records(double rate, double interval, int threshold) {
  require_nonnegative(rate, interval, threshold);
  if (rate == 0.0) return 0.0;
  const double x = interval * rate;
  if (std::isinf(x)) return 0.0;
  if (use_direct(x, threshold)) return direct_sums(x, threshold).variance;
  const double n = threshold;
  const double q = std::exp(-x);
  // e^{-nx} - e^{-(n+1)x} = e^{-nx} (1 - e^{-x})
  const double gap = std::exp(-n * x) * -std::expm1(-x);
  return q * (1.0 - (2.0 * n + 1.0) * gap - std::exp(-(2.0 * n + 1.0) * x)) / (std::expm1(-x) * std::expm1(-x));
}

Moments uncond_moments(double rate, double interval, int threshold, int stage, Convention convention) {
  if (stage < 0) throw Error(ErrorCode::StageOutOfRange, "stage must be nonnegative");
  require_nonnegative(rate, interval, threshold);
  const double reach = stage == 0 ? 1.0 : std::pow(advance_or_zero(rate, interval, threshold, convention), stage);
  Moments out;
  out.mean = reach * cond_mean_records(rate, interval, threshold);
  out.second = reach * cond_second_moment(rate, interval, threshold);
  out.variance = out.second - out.mean * out.mean;
  return out;
}

double final_state_probability(double rate, double interval, int threshold, int stages, int from_stage,
                               const Matrix& final_transition, int state, Convention convention) {
  if (state < 0 || state >= final_transition.cols()) {
    throw Error(ErrorCode::StateOutOfRange, "final state " + std::to_string(state) + " out of range");
  }
  for (Eigen::Index j = 0; j < final_transition.rows(); ++j) {
    if (!final_transition.row(j).allFinite()) {
      throw Error(ErrorCode::UndefinedTransitionRow,
                  "final transition row " + std::to_string(j) + " is undefined");
    }
  }
  const double column = final_transition.col(state).sum();
  return column * final_reach_probability(rate, interval, threshold, stages, from_stage, convention);
}

}  // namespace stagewalk
