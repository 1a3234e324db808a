#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stagewalk/core_model.hpp"
#include "stagewalk/rng.hpp"

namespace stagewalk {

/// How a record interval containing more than one move is handled.
enum class IntervalPolicy {
  /// At most one move per interval: the clock for leaving a stage starts at
  /// the first record tick there. Every visit is recorded.
  Strict,
  /// Clocks run from the actual move instant, so several moves can fall in
  /// one interval. The tick records the farthest stage reached; stages passed
  /// through in between are kept as visits with one record and
  /// `recorded == false`.
  Farthest,
};

struct SimConfig {
  std::uint64_t seed = 0;
  std::vector<std::int64_t> paths_per_group;
  IntervalPolicy policy = IntervalPolicy::Strict;
  unsigned threads = 1;
};

PathObservation simulate_path(const StudyDesign& design, const GroupParams& params, int group,
                              Rng& rng, IntervalPolicy policy = IntervalPolicy::Strict);

/// Single path from its own seed.
PathObservation simulate_path(const StudyDesign& design, const GroupParams& params, int group,
                              std::uint64_t seed, IntervalPolicy policy = IntervalPolicy::Strict);

/// Paths are ordered by group, then by index within the group. Path `p` of
/// group `k` draws from Rng::substream(config.seed, k, p), so the output does
/// not depend on `config.threads`.
Dataset simulate_dataset(const StudyDesign& design, const GroupParams& params,
                         const SimConfig& config);

/// Visits that were passed through between ticks (Farthest policy only).
std::int64_t count_unrecorded_visits(const Dataset& data);

enum class EventKind {
  MoveAndSurviveInterval,  // P(Z1 <= b, Z2 > b - Z1) for the move into `stage`
  ReachStage,              // path recorded at `stage`
  ReachFinal,
  ReachFinalState,         // path ends in final state `state`
  StayCount,               // w at `stage` equals `value`; -1 = stage never recorded
};

struct Event {
  EventKind kind = EventKind::ReachFinal;
  int stage = 1;
  int state = 0;
  int value = 0;
};

/// Parses "move-and-survive-interval", "reach-stage", "reach-final",
/// "reach-final-state" or "stay-count". Throws UnknownEvent otherwise.
EventKind parse_event_kind(std::string_view name);
std::string_view to_string(EventKind kind) noexcept;

struct McEstimate {
  double estimate = 0.0;
  double standard_error = 0.0;
  std::int64_t hits = 0;
  std::int64_t samples = 0;
};

/// Plain Monte Carlo frequency of `event` with its binomial standard error.
/// Sample j uses its own substream, so the result is independent of
/// `threads`.
McEstimate mc_event_probability(const StudyDesign& design, const GroupParams& params, int group,
                                const Event& event, std::int64_t samples, std::uint64_t seed,
                                IntervalPolicy policy = IntervalPolicy::Farthest,
                                unsigned threads = 1);

/// Exact probability of `event` under the simulated process, or nullopt when
/// no closed form is available (Farthest policy with per-stage rates).
///
/// Strict: stage advances are independent with probability 1 - exp(-n b
/// lambda). Farthest with equal rates: the number of moves per interval is
/// Poisson(lambda b), so recorded stages follow a short dynamic program.
std::optional<double> exact_event_probability(const StudyDesign& design, const GroupParams& params,
                                              int group, const Event& event, IntervalPolicy policy);

}  // namespace stagewalk
