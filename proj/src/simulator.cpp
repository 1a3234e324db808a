#include "stagewalk/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <thread>

#include "stagewalk/likelihood.hpp"

namespace stagewalk {

namespace {

std::vector<double> row_of(const Matrix& m, int row) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(j)] = m(row, j);
  return out;
}

int next_state(const GroupParams& params, int group, int stage, int from, Rng& rng) {
  const auto row = row_of(params.transition(group, stage), from);
  return rng.categorical(row);
}

PathObservation simulate_strict(const StudyDesign& design, const GroupParams& params, int group,
                                Rng& rng) {
  const int m = design.stages();
  const int n = design.removal_threshold;
  const double b = design.record_interval;
  PathObservation path;
  path.group = group;
  const auto init = params.initial_distribution(group, design.states[0]);
  int state = rng.categorical(init);
  for (int stage = 0; stage < m - 1; ++stage) {
    const double wait = rng.exponential(params.rate(group, stage + 1));
    const double idle = std::floor(wait / b);
    if (idle >= n) {
      path.visits.push_back({stage, state, n + 1, true});
      path.terminal = Terminal::Removed;
      return path;
    }
    path.visits.push_back({stage, state, static_cast<int>(idle) + 1, true});
    state = next_state(params, group, stage + 1, state, rng);
  }
  path.visits.push_back({m - 1, state, 1, true});
  path.terminal = Terminal::ReachedFinal;
  return path;
}

// Clocks run from the move instant; the path is seen at multiples of b.
PathObservation simulate_farthest(const StudyDesign& design, const GroupParams& params, int group,
                                  Rng& rng) {
  const int m = design.stages();
  const int n = design.removal_threshold;
  const double b = design.record_interval;
  PathObservation path;
  path.group = group;
  const auto init = params.initial_distribution(group, design.states[0]);
  int state = rng.categorical(init);
  double entered = 0.0;
  for (int stage = 0; stage < m - 1; ++stage) {
    const double leave = entered + rng.exponential(params.rate(group, stage + 1));
    const double first_tick = std::ceil(entered / b);
    const double last_tick = std::ceil(leave / b) - 1.0;  // last tick strictly before the move
    if (last_tick < first_tick) {
      path.visits.push_back({stage, state, 1, false});
    } else {
      const double seen = last_tick - first_tick + 1.0;
      if (seen >= n + 1) {
        path.visits.push_back({stage, state, n + 1, true});
        path.terminal = Terminal::Removed;
        return path;
      }
      path.visits.push_back({stage, state, static_cast<int>(seen), true});
    }
    state = next_state(params, group, stage + 1, state, rng);
    entered = leave;
  }
  path.visits.push_back({m - 1, state, 1, true});
  path.terminal = Terminal::ReachedFinal;
  return path;
}

PathObservation simulate_unchecked(const StudyDesign& design, const GroupParams& params, int group,
                                   Rng& rng, IntervalPolicy policy) {
  return policy == IntervalPolicy::Strict ? simulate_strict(design, params, group, rng)
                                          : simulate_farthest(design, params, group, rng);
}

void check_group(const GroupParams& params, int group) {
  if (group < 0 || group >= params.groups()) {
    throw Error(ErrorCode::InvalidArgument, "group " + std::to_string(group) + " out of range");
  }
}

// Runs body(begin, end) over [0, count) split into contiguous blocks.
void parallel_blocks(std::int64_t count, unsigned threads,
                     const std::function<void(std::int64_t, std::int64_t)>& body) {
  const auto workers = static_cast<std::int64_t>(std::max(1u, threads));
  if (workers == 1 || count < 2) {
    body(0, count);
    return;
  }
  const std::int64_t chunk = (count + workers - 1) / workers;
  std::vector<std::jthread> pool;
  for (std::int64_t begin = 0; begin < count; begin += chunk) {
    pool.emplace_back(body, begin, std::min(count, begin + chunk));
  }
}

bool event_hit(const Event& event, const PathObservation& path, int final_stage) {
  switch (event.kind) {
    case EventKind::ReachStage:
    case EventKind::ReachFinal: {
      const int stage = event.kind == EventKind::ReachFinal ? final_stage : event.stage;
      for (const auto& v : path.visits) {
        if (v.stage == stage) return v.recorded;
      }
      return false;
    }
    case EventKind::ReachFinalState:
      return path.terminal == Terminal::ReachedFinal && path.visits.back().state == event.state;
    case EventKind::StayCount: {
      for (const auto& v : path.visits) {
        if (v.stage == event.stage && v.recorded) return v.records - 1 == event.value;
      }
      return event.value == -1;
    }
    case EventKind::MoveAndSurviveInterval:
      break;
  }
  return false;
}

void check_event(const StudyDesign& design, const Event& event) {
  const int m = design.stages();
  switch (event.kind) {
    case EventKind::MoveAndSurviveInterval:
      if (event.stage < 1 || event.stage > m - 1) {
        throw Error(ErrorCode::StageOutOfRange, "move event stage must be in 1..m-1");
      }
      break;
    case EventKind::ReachStage:
      if (event.stage < 0 || event.stage > m - 1) {
        throw Error(ErrorCode::StageOutOfRange, "stage out of range");
      }
      break;
    case EventKind::StayCount:
      if (event.stage < 0 || event.stage > m - 2) {
        throw Error(ErrorCode::StageOutOfRange, "stay counts exist for stages 0..m-2");
      }
      break;
    case EventKind::ReachFinalState:
      if (event.state < 0 || event.state >= design.states.back()) {
        throw Error(ErrorCode::StateOutOfRange, "final state out of range");
      }
      break;
    case EventKind::ReachFinal:
      break;
  }
}

double move_rate_to(const GroupParams& params, int group, int stage, int m) {
  return params.rate(group, stage + 1 <= m - 1 ? stage + 1 : stage);
}

double poisson_pmf(int k, double mean) {
  return std::exp(k * std::log(mean) - mean - std::lgamma(k + 1.0));
}

// Probability that the path is recorded at each stage; the last entry is the
// final stage. Strict: independent advances. Farthest (equal rate): moves
// per interval are Poisson(lambda b), so a recorded stage j jumps to j + k.
std::vector<double> recorded_probabilities(const StudyDesign& design, const GroupParams& params,
                                           int group, IntervalPolicy policy) {
  const int m = design.stages();
  const int n = design.removal_threshold;
  const double b = design.record_interval;
  std::vector<double> reach(static_cast<std::size_t>(m), 0.0);
  reach[0] = 1.0;
  if (policy == IntervalPolicy::Strict) {
    for (int i = 1; i < m; ++i) {
      reach[static_cast<std::size_t>(i)] =
          reach[static_cast<std::size_t>(i - 1)] * -std::expm1(-n * b * params.rate(group, i));
    }
    return reach;
  }
  const double lambda = params.rate(group, 1);
  const double mean = lambda * b;
  const double q = std::exp(-mean);
  // Sum over w = 0..n-1 of q^w: the move happens in interval w + 1.
  const double survive = -std::expm1(-n * mean) / -std::expm1(-mean);
  for (int j = 0; j < m - 1; ++j) {
    const double from = reach[static_cast<std::size_t>(j)];
    if (from == 0.0) continue;
    double tail = 1.0 - q;  // P(K >= 1)
    for (int k = 1; j + k < m - 1; ++k) {
      const double pk = poisson_pmf(k, mean);
      reach[static_cast<std::size_t>(j + k)] += from * survive * pk;
      tail -= pk;
    }
    reach[static_cast<std::size_t>(m - 1)] += from * survive * std::max(tail, 0.0);
  }
  return reach;
}

std::vector<double> final_state_distribution(const StudyDesign& design, const GroupParams& params,
                                             int group) {
  const int m = design.stages();
  const auto init = params.initial_distribution(group, design.states[0]);
  Eigen::RowVectorXd dist(static_cast<Eigen::Index>(init.size()));
  for (std::size_t u = 0; u < init.size(); ++u) dist(static_cast<Eigen::Index>(u)) = init[u];
  for (int i = 1; i < m; ++i) dist = dist * params.transition(group, i);
  return {dist.data(), dist.data() + dist.size()};
}

}  // namespace

PathObservation simulate_path(const StudyDesign& design, const GroupParams& params, int group,
                              Rng& rng, IntervalPolicy policy) {
  require_valid(validate(design, params));
  check_group(params, group);
  return simulate_unchecked(design, params, group, rng, policy);
}

PathObservation simulate_path(const StudyDesign& design, const GroupParams& params, int group,
                              std::uint64_t seed, IntervalPolicy policy) {
  Rng rng(seed);
  return simulate_path(design, params, group, rng, policy);
}

Dataset simulate_dataset(const StudyDesign& design, const GroupParams& params,
                         const SimConfig& config) {
  require_valid(validate(design, params));
  if (static_cast<int>(config.paths_per_group.size()) != design.groups) {
    throw Error(ErrorCode::DimensionMismatch, "paths_per_group needs one entry per group");
  }
  Dataset data;
  data.design = design;
  std::vector<std::pair<int, std::int64_t>> jobs;
  for (int k = 0; k < design.groups; ++k) {
    const auto count = config.paths_per_group[static_cast<std::size_t>(k)];
    if (count < 0) throw Error(ErrorCode::InvalidArgument, "path counts must be nonnegative");
    for (std::int64_t p = 0; p < count; ++p) jobs.emplace_back(k, p);
  }
  data.paths.resize(jobs.size());
  parallel_blocks(static_cast<std::int64_t>(jobs.size()), config.threads,
                  [&](std::int64_t begin, std::int64_t end) {
                    for (std::int64_t j = begin; j < end; ++j) {
                      const auto [group, index] = jobs[static_cast<std::size_t>(j)];
                      Rng rng = Rng::substream(config.seed, static_cast<std::uint64_t>(group),
                                               static_cast<std::uint64_t>(index));
                      data.paths[static_cast<std::size_t>(j)] =
                          simulate_unchecked(design, params, group, rng, config.policy);
                    }
                  });
  return data;
}

std::int64_t count_unrecorded_visits(const Dataset& data) {
  std::int64_t count = 0;
  for (const auto& path : data.paths) {
    for (const auto& v : path.visits) count += v.recorded ? 0 : 1;
  }
  return count;
}

EventKind parse_event_kind(std::string_view name) {
  if (name == "move-and-survive-interval") return EventKind::MoveAndSurviveInterval;
  if (name == "reach-stage") return EventKind::ReachStage;
  if (name == "reach-final") return EventKind::ReachFinal;
  if (name == "reach-final-state") return EventKind::ReachFinalState;
  if (name == "stay-count") return EventKind::StayCount;
  throw Error(ErrorCode::UnknownEvent, "unknown event '" + std::string(name) + "'");
}

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::MoveAndSurviveInterval: return "move-and-survive-interval";
    case EventKind::ReachStage: return "reach-stage";
    case EventKind::ReachFinal: return "reach-final";
    case EventKind::ReachFinalState: return "reach-final-state";
    case EventKind::StayCount: return "stay-count";
  }
  return "unknown";
}

McEstimate mc_event_probability(const StudyDesign& design, const GroupParams& params, int group,
                                const Event& event, std::int64_t samples, std::uint64_t seed,
                                IntervalPolicy policy, unsigned threads) {
  require_valid(validate(design, params));
  check_group(params, group);
  check_event(design, event);
  if (samples <= 0) throw Error(ErrorCode::InvalidArgument, "samples must be positive");
  const int m = design.stages();
  const double b = design.record_interval;
  const auto workers = std::max(1u, threads);
  std::vector<std::int64_t> hits(workers, 0);
  const std::int64_t chunk = (samples + workers - 1) / workers;
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      const std::int64_t begin = std::min(samples, chunk * w);
      const std::int64_t end = std::min(samples, begin + chunk);
      pool.emplace_back([&, w, begin, end] {
        std::int64_t local = 0;
        for (std::int64_t j = begin; j < end; ++j) {
          Rng rng = Rng::substream(seed, static_cast<std::uint64_t>(group), static_cast<std::uint64_t>(j));
          if (event.kind == EventKind::MoveAndSurviveInterval) {
            const double z1 = rng.exponential(params.rate(group, event.stage));
            const double z2 = rng.exponential(move_rate_to(params, group, event.stage, m));
            local += (z1 <= b && z2 > b - z1) ? 1 : 0;
          } else {
            local += event_hit(event, simulate_unchecked(design, params, group, rng, policy), m - 1) ? 1 : 0;
          }
        }
        hits[w] = local;
      });
    }
  }
  McEstimate out;
  out.samples = samples;
  for (auto h : hits) out.hits += h;
  out.estimate = static_cast<double>(out.hits) / static_cast<double>(samples);
  out.standard_error = std::sqrt(out.estimate * (1.0 - out.estimate) / static_cast<double>(samples));
  return out;
}

std::optional<double> exact_event_probability(const StudyDesign& design, const GroupParams& params,
                                              int group, const Event& event, IntervalPolicy policy) {
  require_valid(validate(design, params));
  check_group(params, group);
  check_event(design, event);
  const int m = design.stages();
  const double b = design.record_interval;
  if (event.kind == EventKind::MoveAndSurviveInterval) {
    return move_contribution(params.rate(group, event.stage),
                             move_rate_to(params, group, event.stage, m), b, Convention::Corrected);
  }
  if (policy == IntervalPolicy::Farthest && params.rate_mode == RateMode::PerStage) return std::nullopt;
  const auto reach = recorded_probabilities(design, params, group, policy);
  switch (event.kind) {
    case EventKind::ReachStage:
      return reach[static_cast<std::size_t>(event.stage)];
    case EventKind::ReachFinal:
      return reach.back();
    case EventKind::ReachFinalState:
      return reach.back() * final_state_distribution(design, params, group)[static_cast<std::size_t>(event.state)];
    case EventKind::StayCount: {
      const double at = reach[static_cast<std::size_t>(event.stage)];
      if (event.value == -1) return 1.0 - at;
      const int n = design.removal_threshold;
      if (event.value < 0 || event.value > n) return 0.0;
      const double x = b * params.rate(group, event.stage + 1);
      if (event.value == n) return at * std::exp(-n * x);
      return at * std::exp(-event.value * x) * -std::expm1(-x);
    }
    case EventKind::MoveAndSurviveInterval:
      break;
  }
  return std::nullopt;
}

}  // namespace stagewalk
