#include "stagewalk/estimation.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "stagewalk/likelihood.hpp"

namespace stagewalk {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool same_double(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

bool same_doubles(const std::vector<double>& a, const std::vector<double>& b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end(), same_double);
}

bool same_matrix(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!same_double(a.data()[i], b.data()[i])) return false;
  }
  return true;
}

// Stops TOMS 748 once the bracket is below 1e-14 relative.
struct RelativeTolerance {
  bool operator()(double a, double b) const {
    return std::abs(b - a) <= 1e-14 * (std::min(std::abs(a), std::abs(b)) + 1e-300);
  }
};

double equal_rate_score(double rate, double idle, double interior, double final_arrivals, double b) {
  double s = -b * (idle + interior);
  if (interior > 0) s += interior / rate;
  if (final_arrivals > 0) s += final_arrivals * b / std::expm1(b * rate);
  return s;
}

std::vector<double> with_coordinate(std::span<const double> rates, int stage, double value) {
  std::vector<double> out(rates.begin(), rates.end());
  out[static_cast<std::size_t>(stage - 1)] = value;
  return out;
}

double per_stage_rate_loglik(const GroupStats& stats, std::span<const double> rates, double b,
                             Convention convention) {
  LikelihoodOptions options;
  options.rate_mode = RateMode::PerStage;
  options.include_transitions = false;
  options.convention = convention;
  return group_log_likelihood(stats, rates, {}, b, options);
}

// d/d lambda_stage of the per-stage rate log-likelihood.
double per_stage_partial(const GroupStats& stats, std::span<const double> rates, int stage, double b) {
  const int m = static_cast<int>(stats.arrivals.size());
  const auto at = [&](int i) { return rates[static_cast<std::size_t>(i - 1)]; };
  const auto count = [](std::int64_t c) { return static_cast<double>(c); };
  double g = -b * count(stats.idle[static_cast<std::size_t>(stage - 1)]);
  if (stage <= m - 2 && stats.arrivals[static_cast<std::size_t>(stage)] > 0) {
    g += count(stats.arrivals[static_cast<std::size_t>(stage)]) *
         log_move_gradient(at(stage), at(stage + 1), b).d_from;
  }
  if (stage >= 2 && stats.arrivals[static_cast<std::size_t>(stage - 1)] > 0) {
    g += count(stats.arrivals[static_cast<std::size_t>(stage - 1)]) *
         log_move_gradient(at(stage - 1), at(stage), b).d_to;
  }
  if (stage == m - 1 && stats.final_arrivals() > 0) {
    g += count(stats.final_arrivals()) * b / std::expm1(b * at(stage));
  }
  return g;
}

double gradient_norm(const GroupStats& stats, std::span<const double> rates, double b) {
  double sq = 0.0;
  for (int i = 1; i <= static_cast<int>(rates.size()); ++i) {
    const double g = per_stage_partial(stats, rates, i, b);
    sq += g * g;
  }
  return std::sqrt(sq);
}

std::string stage_label(int stage) { return "lambda_" + std::to_string(stage); }

// Maximizer of the likelihood along coordinate `stage` with the others fixed.
// `scan` forces the log-spaced search; otherwise the bracket grows from the
// current value.
double maximize_coordinate(const GroupStats& stats, std::vector<double>& rates, int stage, double b,
                           bool scan) {
  const auto partial = [&](double x) {
    return per_stage_partial(stats, with_coordinate(rates, stage, x), stage, b);
  };
  const auto value = [&](double x) {
    return per_stage_rate_loglik(stats, with_coordinate(rates, stage, x), b, Convention::Corrected);
  };
  const double current = rates[static_cast<std::size_t>(stage - 1)];
  double lo = current;
  double hi = current;
  bool bracketed = false;
  if (!scan) {
    const double g0 = partial(current);
    if (g0 == 0.0) return current;
    for (int k = 0; k < 60 && !bracketed; ++k) {
      if (g0 > 0) {
        lo = hi;
        hi *= 2.0;
        bracketed = partial(hi) < 0;
      } else {
        hi = lo;
        lo *= 0.5;
        bracketed = partial(lo) > 0;
      }
    }
  }
  if (!bracketed) {
    constexpr int kPoints = 161;  // 1e-8/b .. 1e8/b, ten per decade
    double best = -std::numeric_limits<double>::infinity();
    int best_index = 0;
    std::vector<double> grid(kPoints);
    for (int j = 0; j < kPoints; ++j) {
      grid[static_cast<std::size_t>(j)] = std::pow(10.0, -8.0 + 0.1 * j) / b;
      const double v = value(grid[static_cast<std::size_t>(j)]);
      if (v > best) {
        best = v;
        best_index = j;
      }
    }
    if (best_index == 0 || best_index == kPoints - 1) {
      throw Error(ErrorCode::NoInteriorMax,
                  stage_label(stage) + " has no interior maximum (estimate runs to " +
                      (best_index == 0 ? "0" : "infinity") + ")");
    }
    lo = grid[static_cast<std::size_t>(best_index - 1)];
    hi = grid[static_cast<std::size_t>(best_index + 1)];
  }
  const double glo = partial(lo);
  const double ghi = partial(hi);
  if (glo > 0 && ghi < 0) {
    std::uintmax_t iters = 200;
    const auto root = boost::math::tools::toms748_solve(partial, lo, hi, glo, ghi, RelativeTolerance{}, iters);
    return 0.5 * (root.first + root.second);
  }
  const auto best = boost::math::tools::brent_find_minima([&](double x) { return -value(x); }, lo, hi,
                                                          std::numeric_limits<double>::digits / 2);
  return best.first;
}

// Newton steps on the full gradient, Hessian from differences of the
// analytic partials. A step is kept only if it does not lower the likelihood.
void newton_polish(const GroupStats& stats, std::vector<double>& rates, double b) {
  const int d = static_cast<int>(rates.size());
  for (int iter = 0; iter < 20; ++iter) {
    Eigen::VectorXd g(d);
    for (int i = 0; i < d; ++i) g(i) = per_stage_partial(stats, rates, i + 1, b);
    if (g.norm() < 1e-10) return;
    Eigen::MatrixXd h(d, d);
    for (int j = 0; j < d; ++j) {
      const double step = 1e-6 * rates[static_cast<std::size_t>(j)];
      auto plus = rates;
      auto minus = rates;
      plus[static_cast<std::size_t>(j)] += step;
      minus[static_cast<std::size_t>(j)] -= step;
      for (int i = 0; i < d; ++i) {
        h(i, j) = (per_stage_partial(stats, plus, i + 1, b) - per_stage_partial(stats, minus, i + 1, b)) /
                  (2.0 * step);
      }
    }
    h = 0.5 * (h + h.transpose()).eval();
    const Eigen::VectorXd delta = h.ldlt().solve(-g);
    auto next = rates;
    bool positive = true;
    for (int i = 0; i < d; ++i) {
      next[static_cast<std::size_t>(i)] += delta(i);
      positive = positive && next[static_cast<std::size_t>(i)] > 0;
    }
    if (!positive || !delta.allFinite()) return;
    const double before = per_stage_rate_loglik(stats, rates, b, Convention::Corrected);
    const double after = per_stage_rate_loglik(stats, next, b, Convention::Corrected);
    if (after < before - 1e-12 * std::abs(before)) return;
    rates = std::move(next);
  }
}

void require_data(const GroupStats& stats) {
  if (stats.paths == 0 || (stats.total_idle() == 0 && stats.interior_arrivals() == 0 &&
                           stats.final_arrivals() == 0)) {
    throw Error(ErrorCode::DegenerateData, "no paths or no counts to fit");
  }
}

const GroupStats& group_stats(const SufficientStats& stats, const StudyDesign& design, int group) {
  if (stats.states != design.states) {
    throw Error(ErrorCode::DimensionMismatch, "statistics do not match the design");
  }
  if (group < 0 || group >= static_cast<int>(stats.groups.size())) {
    throw Error(ErrorCode::InvalidArgument, "group " + std::to_string(group) + " out of range");
  }
  return stats.groups[static_cast<std::size_t>(group)];
}

double richardson_second_difference(const std::function<double(double)>& f, double x, double h) {
  const auto d2 = [&](double step) { return (f(x + step) - 2.0 * f(x) + f(x - step)) / (step * step); };
  return (4.0 * d2(0.5 * h) - d2(h)) / 3.0;
}

}  // namespace

bool TransitionEstimate::has_undefined() const {
  for (const auto& stage : undefined_rows) {
    for (bool u : stage) {
      if (u) return true;
    }
  }
  return false;
}

bool TransitionEstimate::row_undefined(int stage, int from_state) const {
  return undefined_rows.at(static_cast<std::size_t>(stage - 1)).at(static_cast<std::size_t>(from_state));
}

bool operator==(const TransitionEstimate& a, const TransitionEstimate& b) {
  if (a.undefined_rows != b.undefined_rows || a.probabilities.size() != b.probabilities.size()) return false;
  for (std::size_t i = 0; i < a.probabilities.size(); ++i) {
    if (!same_matrix(a.probabilities[i], b.probabilities[i])) return false;
  }
  return true;
}

TransitionEstimate mle_transition_probs(const GroupStats& stats) {
  TransitionEstimate out;
  for (const CountMatrix& counts : stats.moves) {
    Matrix p(counts.rows(), counts.cols());
    std::vector<bool> undefined(static_cast<std::size_t>(counts.rows()), false);
    for (Eigen::Index u = 0; u < counts.rows(); ++u) {
      const auto total = counts.row(u).sum();
      if (total == 0) {
        undefined[static_cast<std::size_t>(u)] = true;
        p.row(u).setConstant(kNaN);
        continue;
      }
      for (Eigen::Index j = 0; j < counts.cols(); ++j) {
        p(u, j) = static_cast<double>(counts(u, j)) / static_cast<double>(total);
      }
    }
    out.probabilities.push_back(std::move(p));
    out.undefined_rows.push_back(std::move(undefined));
  }
  return out;
}

RateEstimate mle_rate_equal(const GroupStats& stats, double interval, Convention convention) {
  if (!(interval > 0.0)) throw Error(ErrorCode::InvalidArgument, "record interval must be positive");
  const auto idle = stats.total_idle();
  const auto interior = stats.interior_arrivals();
  const auto final_arrivals = stats.final_arrivals();
  if (idle == 0 && interior == 0 && final_arrivals == 0) {
    throw Error(ErrorCode::DegenerateData, "all counts are zero");
  }
  if (idle + interior == 0) {
    throw Error(ErrorCode::NoInteriorMax,
                "only final arrivals observed; the likelihood increases without bound in lambda");
  }
  if (interior == 0 && final_arrivals == 0) {
    throw Error(ErrorCode::NoInteriorMax, "no moves observed; the likelihood is maximized at lambda = 0");
  }
  const double b = interval;
  const auto w = static_cast<double>(idle);
  const auto v = static_cast<double>(interior);
  const auto f = static_cast<double>(final_arrivals);
  const auto score = [&](double x) { return equal_rate_score(x, w, v, f, b); };

  RateEstimate out;
  const double start = v > 0 ? v / (b * (w + v)) : 1.0 / b;
  double lo = start;
  double hi = start;
  double slo = score(lo);
  double shi = slo;
  int expansions = 0;
  while (slo <= 0.0 && expansions < 200) {
    hi = lo;
    shi = slo;
    lo *= 0.25;
    slo = score(lo);
    ++expansions;
  }
  while (shi >= 0.0 && expansions < 400) {
    lo = hi;
    slo = shi;
    hi *= 4.0;
    shi = score(hi);
    ++expansions;
  }
  out.diagnostics.bracket_lower = lo;
  out.diagnostics.bracket_upper = hi;
  if (slo == 0.0) {
    out.rate = lo;
  } else if (shi == 0.0) {
    out.rate = hi;
  } else if (slo > 0.0 && shi < 0.0) {
    std::uintmax_t iters = 200;
    const auto root = boost::math::tools::toms748_solve(score, lo, hi, slo, shi, RelativeTolerance{}, iters);
    out.rate = 0.5 * (root.first + root.second);
    out.diagnostics.iterations = static_cast<int>(iters) + expansions;
    out.diagnostics.converged = iters < 200;
  } else {
    throw Error(ErrorCode::NonConvergence, "could not bracket the score root");
  }
  out.diagnostics.gradient_norm = std::abs(score(out.rate));
  out.log_likelihood = equal_rate_log_likelihood(out.rate, idle, interior, final_arrivals, b, convention);
  return out;
}

RateEstimate mle_rate_equal(const SufficientStats& stats, const StudyDesign& design, int group,
                            Convention convention) {
  return mle_rate_equal(group_stats(stats, design, group), design.record_interval, convention);
}

PerStageEstimate mle_rate_per_stage(const GroupStats& stats, double interval, Convention convention) {
  if (!(interval > 0.0)) throw Error(ErrorCode::InvalidArgument, "record interval must be positive");
  if (stats.paths == 0) throw Error(ErrorCode::DegenerateData, "empty group");
  const int d = static_cast<int>(stats.arrivals.size()) - 1;
  for (int i = 1; i <= d; ++i) {
    if (stats.idle[static_cast<std::size_t>(i - 1)] == 0 && stats.arrivals[static_cast<std::size_t>(i)] == 0) {
      throw Error(ErrorCode::DegenerateData, "no observations inform " + stage_label(i));
    }
  }
  const double b = interval;
  double base = 1.0 / b;
  try {
    base = mle_rate_equal(stats, b).rate;
  } catch (const Error&) {
  }

  constexpr int kMaxSweeps = 5000;
  PerStageEstimate best;
  bool have_best = false;
  for (double factor : {1.0, 0.5, 2.0}) {
    std::vector<double> rates(static_cast<std::size_t>(d), base * factor);
    int sweeps = 0;
    double gnorm = gradient_norm(stats, rates, b);
    while (sweeps < kMaxSweeps && gnorm >= 1e-8) {
      for (int i = 1; i <= d; ++i) {
        rates[static_cast<std::size_t>(i - 1)] = maximize_coordinate(stats, rates, i, b, sweeps == 0);
      }
      ++sweeps;
      gnorm = gradient_norm(stats, rates, b);
      if (gnorm < 1e-6) {
        newton_polish(stats, rates, b);
        gnorm = gradient_norm(stats, rates, b);
      }
    }
    PerStageEstimate candidate;
    candidate.rates = rates;
    candidate.log_likelihood = per_stage_rate_loglik(stats, rates, b, convention);
    candidate.diagnostics.iterations = sweeps;
    candidate.diagnostics.gradient_norm = gnorm;
    candidate.diagnostics.converged = gnorm < 1e-8;
    candidate.diagnostics.starts = 3;
    candidate.diagnostics.bracket_lower = *std::min_element(rates.begin(), rates.end());
    candidate.diagnostics.bracket_upper = *std::max_element(rates.begin(), rates.end());
    const bool better = !have_best ||
                        (candidate.diagnostics.converged && !best.diagnostics.converged) ||
                        (candidate.diagnostics.converged == best.diagnostics.converged &&
                         candidate.log_likelihood > best.log_likelihood);
    if (better) {
      best = std::move(candidate);
      have_best = true;
    }
  }
  if (!best.diagnostics.converged) {
    best.diagnostics.note = "NonConvergence: gradient norm " + std::to_string(best.diagnostics.gradient_norm) +
                            " after " + std::to_string(best.diagnostics.iterations) + " sweeps";
  }
  return best;
}

PerStageEstimate mle_rate_per_stage(const SufficientStats& stats, const StudyDesign& design, int group,
                                    Convention convention) {
  return mle_rate_per_stage(group_stats(stats, design, group), design.record_interval, convention);
}

double observed_information(const GroupStats& stats, double rate, double interval) {
  if (stats.paths == 0) throw Error(ErrorCode::DegenerateData, "information needs at least one path");
  if (!(rate > 0.0)) throw Error(ErrorCode::NonPositiveRate, "rate must be positive");
  const auto idle = stats.total_idle();
  const auto interior = stats.interior_arrivals();
  const auto final_arrivals = stats.final_arrivals();
  const auto loglik = [&](double x) {
    return equal_rate_log_likelihood(x, idle, interior, final_arrivals, interval, Convention::Corrected);
  };
  const double h = std::min(1e-5 * (1.0 + rate), 0.25 * rate);
  const double info = -richardson_second_difference(loglik, rate, h) / static_cast<double>(stats.paths);
  if (!(info > 0.0)) {
    throw Error(ErrorCode::NonPositiveInformation, "observed information is not positive");
  }
  return info;
}

double per_stage_information(const GroupStats& stats, std::span<const double> rates, int stage,
                             double interval) {
  if (stats.paths == 0) throw Error(ErrorCode::DegenerateData, "information needs at least one path");
  if (stage < 1 || stage > static_cast<int>(rates.size())) {
    throw Error(ErrorCode::StageOutOfRange, "rate index out of range");
  }
  const double x = rates[static_cast<std::size_t>(stage - 1)];
  const auto partial = [&](double v) {
    return per_stage_partial(stats, with_coordinate(rates, stage, v), stage, interval);
  };
  const auto d1 = [&](double step) { return (partial(x + step) - partial(x - step)) / (2.0 * step); };
  const double h = std::min(1e-5 * (1.0 + x), 0.25 * x);
  const double info = -(4.0 * d1(0.5 * h) - d1(h)) / 3.0 / static_cast<double>(stats.paths);
  if (!(info > 0.0)) {
    throw Error(ErrorCode::NonPositiveInformation, "observed information for " + stage_label(stage) +
                                                       " is not positive");
  }
  return info;
}

Interval delta_method_ci(double rate, double information, std::int64_t n,
                         const std::function<double(double)>& g, double level, bool probability_valued) {
  if (!(information > 0.0) || !std::isfinite(information)) {
    throw Error(ErrorCode::NonPositiveInformation, "information must be positive");
  }
  if (n <= 0) throw Error(ErrorCode::InvalidArgument, "sample size must be positive");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must be in (0, 1)");
  const double h = std::min(1e-6 * (1.0 + rate), 0.5 * rate);
  const double slope = (g(rate + h) - g(rate - h)) / (2.0 * h);
  const boost::math::normal_distribution<double> normal;
  const double z = boost::math::quantile(normal, 0.5 + 0.5 * level);
  Interval out;
  out.estimate = g(rate);
  out.standard_error = std::abs(slope) / std::sqrt(static_cast<double>(n) * information);
  out.lower = out.estimate - z * out.standard_error;
  out.upper = out.estimate + z * out.standard_error;
  if (probability_valued) {
    if (out.lower < 0.0) {
      out.lower = 0.0;
      out.clipped = true;
    }
    if (out.upper > 1.0) {
      out.upper = 1.0;
      out.clipped = true;
    }
  }
  return out;
}

bool operator==(const GroupFit& a, const GroupFit& b) {
  return same_doubles(a.rates, b.rates) && same_doubles(a.information, b.information) &&
         same_doubles(a.standard_errors, b.standard_errors) && a.transitions == b.transitions &&
         same_double(a.rate_log_likelihood, b.rate_log_likelihood) &&
         same_double(a.transition_log_likelihood, b.transition_log_likelihood) &&
         a.diagnostics == b.diagnostics && a.paths == b.paths;
}

double FitResult::log_likelihood() const {
  double total = 0.0;
  for (const auto& g : groups) total += g.rate_log_likelihood + g.transition_log_likelihood;
  return total;
}

GroupParams FitResult::params() const {
  GroupParams p;
  p.rate_mode = rate_mode;
  for (const auto& g : groups) {
    p.rates.push_back(g.rates);
    p.transitions.push_back(g.transitions.probabilities);
  }
  return p;
}

bool operator==(const FitResult& a, const FitResult& b) {
  return a.design == b.design && a.rate_mode == b.rate_mode && a.convention == b.convention &&
         a.groups == b.groups && a.stats == b.stats;
}

FitResult fit(const SufficientStats& stats, const StudyDesign& design, RateMode mode, Convention convention) {
  require_valid(validate(design));
  if (stats.states != design.states || static_cast<int>(stats.groups.size()) != design.groups) {
    throw Error(ErrorCode::DimensionMismatch, "statistics do not match the design");
  }
  FitResult out;
  out.design = design;
  out.rate_mode = mode;
  out.convention = convention;
  out.stats = stats;
  const double b = design.record_interval;
  for (int k = 0; k < design.groups; ++k) {
    const GroupStats& gs = stats.groups[static_cast<std::size_t>(k)];
    GroupFit gf;
    gf.paths = gs.paths;
    try {
      require_data(gs);
      if (mode == RateMode::EqualRate) {
        const auto est = mle_rate_equal(gs, b, convention);
        gf.rates = {est.rate};
        gf.rate_log_likelihood = est.log_likelihood;
        gf.diagnostics = est.diagnostics;
      } else {
        auto est = mle_rate_per_stage(gs, b, convention);
        gf.rates = std::move(est.rates);
        gf.rate_log_likelihood = est.log_likelihood;
        gf.diagnostics = std::move(est.diagnostics);
      }
    } catch (const Error& e) {
      throw Error(e.code(), "group " + std::to_string(k) + ": " + e.what());
    }
    for (int i = 1; i <= static_cast<int>(gf.rates.size()); ++i) {
      double info = kNaN;
      try {
        info = mode == RateMode::EqualRate ? observed_information(gs, gf.rates[0], b)
                                           : per_stage_information(gs, gf.rates, i, b);
      } catch (const Error&) {
        gf.diagnostics.note += (gf.diagnostics.note.empty() ? "" : "; ") +
                               std::string("NonPositiveInformation for ") + stage_label(i);
      }
      gf.information.push_back(info);
      gf.standard_errors.push_back(info > 0.0 ? 1.0 / std::sqrt(static_cast<double>(gs.paths) * info) : kNaN);
    }
    gf.transitions = mle_transition_probs(gs);
    std::vector<Matrix> defined = gf.transitions.probabilities;
    for (auto& p : defined) p = p.unaryExpr([](double x) { return std::isnan(x) ? 1.0 : x; });
    gf.transition_log_likelihood = transition_log_contribution(gs, defined);
    out.groups.push_back(std::move(gf));
  }
  return out;
}

FitResult fit(const Dataset& data, RateMode mode, Convention convention) {
  return fit(extract_sufficient_stats(data), data.design, mode, convention);
}

}  // namespace stagewalk
