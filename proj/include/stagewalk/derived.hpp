#pragma once

#include <vector>

#include "stagewalk/core_model.hpp"

namespace stagewalk {

/// Equal-rate closed forms. Rates are per group; `interval` is b and
/// `threshold` is n.

/// A = lambda b e^{-b lambda} (1 - e^{-n b lambda}); PaperLiteral drops b.
double stage_advance_factor(double rate, double interval, int threshold,
                            Convention convention = Convention::Corrected);

/// The same event computed from the process: the move happens in one of the n
/// intervals before removal and the next clock survives to the tick,
/// lambda b e^{-b lambda} (1 - e^{-n b lambda}) / (1 - e^{-b lambda}).
double process_exact_advance_factor(double rate, double interval, int threshold);

/// A^stage, for stage in 0..stages-2.
double reach_probability(double rate, double interval, int threshold, int stage, int stages,
                         Convention convention = Convention::Corrected);

/// A^{m-2-from} (1 - e^{-n b lambda}), for from_stage in 0..stages-2.
double final_reach_probability(double rate, double interval, int threshold, int stages, int from_stage,
                               Convention convention = Convention::Corrected);

struct StayPmf {
  double rate = 0.0;
  double interval = 1.0;
  int threshold = 1;
  int stage = 0;
  Convention convention = Convention::Corrected;
  /// probabilities[0] is P(w = -1) (stage never reached); probabilities[v + 1]
  /// is P(w = v) for v = 0..n.
  std::vector<double> probabilities;
  /// False when the PaperLiteral factor A exceeds 1 and the entries are not a
  /// distribution.
  bool proper = true;

  [[nodiscard]] double at(int v) const { return probabilities.at(static_cast<std::size_t>(v + 1)); }
  [[nodiscard]] double sum() const;
};

StayPmf stay_pmf(double rate, double interval, int threshold, int stage,
                 Convention convention = Convention::Corrected);

/// Conditional law of the stay count given the stage was reached: e^{-v b
/// lambda}(1 - e^{-b lambda}) for v < n and e^{-n b lambda} for v = n.
std::vector<double> conditional_stay_pmf(double rate, double interval, int threshold);

/// Moments of the record count N = w + 1 given arrival. rate >= 0; rate = 0
/// gives the certain n + 1 records.
double cond_mean_records(double rate, double interval, int threshold);
double cond_second_moment(double rate, double interval, int threshold);
double cond_var_records(double rate, double interval, int threshold);

struct Moments {
  double mean = 0.0;
  double second = 0.0;
  double variance = 0.0;
};

/// Conditional moments scaled by A^stage; variance = E(N^2) - E(N)^2.
Moments uncond_moments(double rate, double interval, int threshold, int stage,
                       Convention convention = Convention::Corrected);

/// K_u A^{m-2-from} (1 - e^{-n b lambda}) with K_u the column sum of the
/// final transition matrix (moves into stage m-1).
double final_state_probability(double rate, double interval, int threshold, int stages, int from_stage,
                               const Matrix& final_transition, int state,
                               Convention convention = Convention::Corrected);

}  // namespace stagewalk
