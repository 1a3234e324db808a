#include "stagewalk/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace stagewalk {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_rate(double rate, const char* what) {
  if (!(rate > 0.0) || std::isnan(rate)) {
    throw Error(ErrorCode::NonPositiveRate, std::string(what) + " must be positive");
  }
}

void require_interval(double interval) {
  if (!(interval > 0.0) || !std::isfinite(interval)) {
    throw Error(ErrorCode::InvalidArgument, "record interval must be positive and finite");
  }
}

bool in_equal_band(double rate_from, double rate_to) {
  return std::abs(rate_from - rate_to) <= kEqualRateBand * std::max(rate_from, rate_to);
}

// log of (1 - e^{-x}) / x, evaluated without cancellation for either sign of x.
double log_phi(double x) {
  if (x == 0.0) return 0.0;
  if (x > 0.0) return std::log(-std::expm1(-x)) - std::log(x);
  return -x + std::log(-std::expm1(x)) - std::log(-x);
}

// Second-order series of log phi for |x| inside the equal-rate band.
double log_phi_series(double x) { return -0.5 * x + x * x / 24.0; }

// d/dx log phi(x) = 1/(e^x - 1) - 1/x.
double dlog_phi(double x) {
  if (std::abs(x) < 1e-4) return -0.5 + x / 12.0;
  return 1.0 / std::expm1(x) - 1.0 / x;
}

double rate_for_stage(std::span<const double> rates, int stage) {
  return rates.size() == 1 ? rates[0] : rates[static_cast<std::size_t>(stage - 1)];
}

void check_rates(const GroupStats& stats, std::span<const double> rates) {
  const std::size_t m = stats.arrivals.size();
  if (rates.size() != 1 && rates.size() != m - 1) {
    throw Error(ErrorCode::DimensionMismatch,
                "expected 1 or " + std::to_string(m - 1) + " rates, got " + std::to_string(rates.size()));
  }
  for (double r : rates) require_rate(r, "rate");
}

}  // namespace

double log_move_contribution(double rate_from, double rate_to, double interval,
                             Convention convention) {
  require_rate(rate_from, "rate_from");
  require_rate(rate_to, "rate_to");
  require_interval(interval);
  const double x = interval * (rate_from - rate_to);
  const bool band = in_equal_band(rate_from, rate_to);
  double value = std::log(rate_from) - interval * rate_to + (band ? log_phi_series(x) : log_phi(x));
  if (!band || convention == Convention::Corrected) value += std::log(interval);
  return value;
}

double move_contribution(double rate_from, double rate_to, double interval, Convention convention) {
  return std::exp(log_move_contribution(rate_from, rate_to, interval, convention));
}

MoveGradient log_move_gradient(double rate_from, double rate_to, double interval) {
  require_rate(rate_from, "rate_from");
  require_rate(rate_to, "rate_to");
  const double g = dlog_phi(interval * (rate_from - rate_to));
  return {1.0 / rate_from + interval * g, -interval - interval * g};
}

double stay_log_contribution(const GroupStats& stats, std::span<const double> rates, double interval) {
  check_rates(stats, rates);
  double total = 0.0;
  for (std::size_t i = 0; i < stats.idle.size(); ++i) {
    if (stats.idle[i] == 0) continue;
    total -= interval * rate_for_stage(rates, static_cast<int>(i) + 1) * static_cast<double>(stats.idle[i]);
  }
  return total;
}

double final_move_log_contribution(const GroupStats& stats, std::span<const double> rates,
                                   double interval) {
  check_rates(stats, rates);
  const std::int64_t arrivals = stats.final_arrivals();
  if (arrivals == 0) return 0.0;
  const int m = static_cast<int>(stats.arrivals.size());
  const double rate = rate_for_stage(rates, m - 1);
  return static_cast<double>(arrivals) * std::log(-std::expm1(-interval * rate));
}

double transition_log_contribution(const GroupStats& stats, std::span<const Matrix> transitions) {
  if (transitions.size() != stats.moves.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one transition matrix per stage move is required");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < stats.moves.size(); ++i) {
    const CountMatrix& counts = stats.moves[i];
    const Matrix& p = transitions[i];
    if (p.rows() != counts.rows() || p.cols() != counts.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "transition matrix shape does not match the counts");
    }
    for (Eigen::Index u = 0; u < counts.rows(); ++u) {
      for (Eigen::Index j = 0; j < counts.cols(); ++j) {
        const auto c = counts(u, j);
        if (c == 0) continue;
        if (p(u, j) <= 0.0) return kNegInf;
        total += static_cast<double>(c) * std::log(p(u, j));
      }
    }
  }
  return total;
}

double group_log_likelihood(const GroupStats& stats, std::span<const double> rates,
                            std::span<const Matrix> transitions, double interval,
                            const LikelihoodOptions& options) {
  require_interval(interval);
  check_rates(stats, rates);
  if (options.rate_mode == RateMode::EqualRate && rates.size() != 1) {
    throw Error(ErrorCode::InvalidArgument, "equal-rate evaluation needs exactly one rate");
  }
  const int m = static_cast<int>(stats.arrivals.size());
  double total = stay_log_contribution(stats, rates, interval);
  for (int i = 1; i <= m - 2; ++i) {
    const auto v = stats.arrivals[static_cast<std::size_t>(i)];
    if (v == 0) continue;
    total += static_cast<double>(v) * log_move_contribution(rate_for_stage(rates, i),
                                                            rate_for_stage(rates, i + 1), interval,
                                                            options.convention);
  }
  total += final_move_log_contribution(stats, rates, interval);
  if (options.include_transitions) total += transition_log_contribution(stats, transitions);
  return total;
}

double equal_rate_log_likelihood(double rate, std::int64_t idle, std::int64_t interior_arrivals,
                                 std::int64_t final_arrivals, double interval, Convention convention) {
  require_rate(rate, "rate");
  require_interval(interval);
  double total = -interval * rate * static_cast<double>(idle + interior_arrivals);
  if (interior_arrivals > 0) {
    double log_move = std::log(rate);
    if (convention == Convention::Corrected) log_move += std::log(interval);
    total += static_cast<double>(interior_arrivals) * log_move;
  }
  if (final_arrivals > 0) {
    total += static_cast<double>(final_arrivals) * std::log(-std::expm1(-interval * rate));
  }
  return total;
}

double log_likelihood(const SufficientStats& stats, const GroupParams& params, double interval,
                      const LikelihoodOptions& options) {
  if (static_cast<int>(stats.groups.size()) != params.groups()) {
    throw Error(ErrorCode::DimensionMismatch, "statistics and parameters disagree on the group count");
  }
  if (options.rate_mode == RateMode::EqualRate && params.rate_mode == RateMode::PerStage) {
    throw Error(ErrorCode::InvalidArgument, "per-stage parameters cannot be evaluated in equal-rate mode");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < stats.groups.size(); ++k) {
    std::span<const Matrix> transitions;
    if (options.include_transitions) transitions = params.transitions.at(k);
    total += group_log_likelihood(stats.groups[k], params.rates[k], transitions, interval, options);
  }
  return total;
}

}  // namespace stagewalk
