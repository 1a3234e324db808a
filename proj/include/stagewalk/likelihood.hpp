#pragma once

#include <span>

#include "stagewalk/core_model.hpp"

namespace stagewalk {

struct LikelihoodOptions {
  RateMode rate_mode = RateMode::EqualRate;
  bool include_transitions = true;
  Convention convention = Convention::Corrected;
};

/// Half-width of the band |lambda_from - lambda_to| <= kEqualRateBand *
/// max(lambda_from, lambda_to) in which the equal-rate limit is used.
inline constexpr double kEqualRateBand = 1e-8;

/// Probability that the move out of the previous stage happens within one
/// record interval and the next move does not happen before the interval
/// ends: lambda_from (e^{-b lambda_to} - e^{-b lambda_from}) / (lambda_from -
/// lambda_to). Inside the equal-rate band the limit lambda b e^{-b lambda}
/// (Corrected) or lambda e^{-b lambda} (PaperLiteral) is returned; only the
/// Corrected form is continuous across the band edge.
double move_contribution(double rate_from, double rate_to, double interval,
                         Convention convention = Convention::Corrected);
double log_move_contribution(double rate_from, double rate_to, double interval,
                             Convention convention = Convention::Corrected);

/// d/d(rate_from) and d/d(rate_to) of log_move_contribution (Corrected).
struct MoveGradient {
  double d_from = 0.0;
  double d_to = 0.0;
};
MoveGradient log_move_gradient(double rate_from, double rate_to, double interval);

/// Survival of the idle intervals: -b * sum_i lambda_{i+1} w_i for one group.
/// `rates` is either a single equal rate or lambda_1..lambda_{m-1}.
double stay_log_contribution(const GroupStats& stats, std::span<const double> rates, double interval);

/// Paths entering the final stage: v_{m-1} log(1 - e^{-b lambda_{m-1}}).
double final_move_log_contribution(const GroupStats& stats, std::span<const double> rates,
                                   double interval);

/// Sum of n log p over observed moves; -inf when a move with p = 0 was seen.
double transition_log_contribution(const GroupStats& stats, std::span<const Matrix> transitions);

/// Log-likelihood of one group's counts. `rates` as for stay_log_contribution;
/// `transitions` may be empty when options.include_transitions is false.
double group_log_likelihood(const GroupStats& stats, std::span<const double> rates,
                            std::span<const Matrix> transitions, double interval,
                            const LikelihoodOptions& options);

/// Equal-rate rate part only, written through the three sufficient totals.
/// Used by the estimator and its information computation.
double equal_rate_log_likelihood(double rate, std::int64_t idle, std::int64_t interior_arrivals,
                                 std::int64_t final_arrivals, double interval,
                                 Convention convention = Convention::Corrected);

/// Total over groups. params.rate_mode must agree with options.rate_mode
/// when rates are per stage; equal-rate params may be evaluated in either
/// mode (the single rate is broadcast).
double log_likelihood(const SufficientStats& stats, const GroupParams& params, double interval,
                      const LikelihoodOptions& options = {});

}  // namespace stagewalk
