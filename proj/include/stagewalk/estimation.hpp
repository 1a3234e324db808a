#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "stagewalk/core_model.hpp"

namespace stagewalk {

/// Row-normalized move counts for one group. Rows with no observed moves are
/// left as NaN and flagged in `undefined_rows[i-1][u]`.
struct TransitionEstimate {
  std::vector<Matrix> probabilities;
  std::vector<std::vector<bool>> undefined_rows;

  [[nodiscard]] bool has_undefined() const;
  [[nodiscard]] bool row_undefined(int stage, int from_state) const;

  friend bool operator==(const TransitionEstimate& a, const TransitionEstimate& b);
};

TransitionEstimate mle_transition_probs(const GroupStats& stats);

struct RateDiagnostics {
  int iterations = 0;
  double bracket_lower = 0.0;
  double bracket_upper = 0.0;
  double gradient_norm = 0.0;
  int starts = 1;
  bool converged = true;
  std::string note;

  friend bool operator==(const RateDiagnostics&, const RateDiagnostics&) = default;
};

struct RateEstimate {
  double rate = 0.0;
  double log_likelihood = 0.0;  // rate part only
  RateDiagnostics diagnostics;
};

/// Root of the equal-rate score
///   -b (w + v) + v / lambda + f b / (e^{b lambda} - 1),
/// where w is the total idle count, v the interior arrivals and f the final
/// arrivals. The score is strictly decreasing, so the root is bracketed from
/// the censor-free value v / (b (w + v)) and refined with TOMS 748.
RateEstimate mle_rate_equal(const GroupStats& stats, double interval,
                            Convention convention = Convention::Corrected);
RateEstimate mle_rate_equal(const SufficientStats& stats, const StudyDesign& design, int group,
                            Convention convention = Convention::Corrected);

struct PerStageEstimate {
  std::vector<double> rates;  // lambda_1..lambda_{m-1}
  double log_likelihood = 0.0;
  RateDiagnostics diagnostics;
};

/// Coordinate ascent on the per-stage rate likelihood from three starts
/// (equal-rate estimate times 1, 0.5 and 2). Each coordinate is located by a
/// log-spaced scan followed by a bracketed solve. Convergence failure is
/// reported in the diagnostics rather than thrown.
PerStageEstimate mle_rate_per_stage(const GroupStats& stats, double interval,
                                    Convention convention = Convention::Corrected);
PerStageEstimate mle_rate_per_stage(const SufficientStats& stats, const StudyDesign& design,
                                    int group, Convention convention = Convention::Corrected);

/// Per-observation observed information of the equal-rate likelihood at
/// `rate`: -l''(rate) / N_k by Richardson-refined central differences with
/// step 1e-5 (1 + rate). SE(rate) = 1 / sqrt(N_k I).
double observed_information(const GroupStats& stats, double rate, double interval);

/// Per-observation information for coordinate `stage` (1..m-1) of the
/// per-stage likelihood.
double per_stage_information(const GroupStats& stats, std::span<const double> rates, int stage,
                             double interval);

struct Interval {
  double estimate = 0.0;
  double standard_error = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool clipped = false;

  friend bool operator==(const Interval&, const Interval&) = default;
};

/// g(rate) +- z |g'(rate)| / sqrt(n I); g' by central difference with step
/// 1e-6 (1 + rate). Probability-valued transforms are clipped to [0, 1].
Interval delta_method_ci(double rate, double information, std::int64_t n,
                         const std::function<double(double)>& g, double level,
                         bool probability_valued = false);

struct GroupFit {
  std::vector<double> rates;            // one entry (equal-rate) or m-1
  std::vector<double> information;      // per observation, per rate
  std::vector<double> standard_errors;  // NaN where information is not positive
  TransitionEstimate transitions;
  double rate_log_likelihood = 0.0;
  double transition_log_likelihood = 0.0;
  RateDiagnostics diagnostics;
  std::int64_t paths = 0;

  friend bool operator==(const GroupFit& a, const GroupFit& b);
};

struct FitResult {
  StudyDesign design;
  RateMode rate_mode = RateMode::EqualRate;
  Convention convention = Convention::Corrected;
  std::vector<GroupFit> groups;
  SufficientStats stats;

  [[nodiscard]] double log_likelihood() const;
  /// Estimates as parameters; undefined transition rows stay NaN.
  [[nodiscard]] GroupParams params() const;

  friend bool operator==(const FitResult& a, const FitResult& b);
};

/// Fits every group. Throws DegenerateData naming the first group without
/// usable data.
FitResult fit(const SufficientStats& stats, const StudyDesign& design, RateMode mode,
              Convention convention = Convention::Corrected);
FitResult fit(const Dataset& data, RateMode mode, Convention convention = Convention::Corrected);

}  // namespace stagewalk
