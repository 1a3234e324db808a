#include "stagewalk/core_model.hpp"

#include <cmath>
#include <sstream>

namespace stagewalk {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidDesign: return "InvalidDesign";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::RowSumViolation: return "RowSumViolation";
    case ErrorCode::NonPositiveRate: return "NonPositiveRate";
    case ErrorCode::InconsistentPath: return "InconsistentPath";
    case ErrorCode::UnknownEvent: return "UnknownEvent";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::NoInteriorMax: return "NoInteriorMax";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::NonPositiveInformation: return "NonPositiveInformation";
    case ErrorCode::StageOutOfRange: return "StageOutOfRange";
    case ErrorCode::StateOutOfRange: return "StateOutOfRange";
    case ErrorCode::UndefinedTransitionRow: return "UndefinedTransitionRow";
    case ErrorCode::EmptyStage: return "EmptyStage";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnbalancedDesign: return "UnbalancedDesign";
    case ErrorCode::MethodUnavailable: return "MethodUnavailable";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

namespace {

constexpr double kRowSumTolerance = 1e-12;

bool same_matrices(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if (a[i] != b[i]) return false;
  }
  return true;
}

bool same_counts(const std::vector<CountMatrix>& a, const std::vector<CountMatrix>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows() != b[i].rows() || a[i].cols() != b[i].cols()) return false;
    if (a[i] != b[i]) return false;
  }
  return true;
}

[[noreturn]] void inconsistent(const std::string& what) {
  throw Error(ErrorCode::InconsistentPath, what);
}

}  // namespace

double GroupParams::rate(int group, int stage) const {
  if (group < 0 || group >= groups()) {
    throw Error(ErrorCode::InvalidArgument, "group index out of range");
  }
  const auto& r = rates[static_cast<std::size_t>(group)];
  if (rate_mode == RateMode::EqualRate) return r.at(0);
  if (stage < 1 || stage > static_cast<int>(r.size())) {
    throw Error(ErrorCode::StageOutOfRange, "rate stage out of range");
  }
  return r[static_cast<std::size_t>(stage - 1)];
}

const Matrix& GroupParams::transition(int group, int stage) const {
  if (group < 0 || group >= static_cast<int>(transitions.size())) {
    throw Error(ErrorCode::InvalidArgument, "group index out of range");
  }
  const auto& t = transitions[static_cast<std::size_t>(group)];
  if (stage < 1 || stage > static_cast<int>(t.size())) {
    throw Error(ErrorCode::StageOutOfRange, "transition stage out of range");
  }
  return t[static_cast<std::size_t>(stage - 1)];
}

std::vector<double> GroupParams::initial_distribution(int group, int stage0_states) const {
  if (group < static_cast<int>(initial.size()) && !initial[static_cast<std::size_t>(group)].empty()) {
    return initial[static_cast<std::size_t>(group)];
  }
  return std::vector<double>(static_cast<std::size_t>(stage0_states), 1.0 / stage0_states);
}

bool operator==(const GroupParams& a, const GroupParams& b) {
  if (a.rate_mode != b.rate_mode || a.rates != b.rates || a.initial != b.initial) return false;
  if (a.transitions.size() != b.transitions.size()) return false;
  for (std::size_t k = 0; k < a.transitions.size(); ++k) {
    if (!same_matrices(a.transitions[k], b.transitions[k])) return false;
  }
  return true;
}

std::vector<ValidationIssue> validate(const StudyDesign& design) {
  std::vector<ValidationIssue> issues;
  auto add = [&](std::string field, std::string msg) {
    issues.push_back({ErrorCode::InvalidDesign, std::move(field), std::move(msg)});
  };
  if (design.stages() < 2) add("design.states", "at least two stages are required");
  for (std::size_t i = 0; i < design.states.size(); ++i) {
    if (design.states[i] < 1) {
      add("design.states[" + std::to_string(i) + "]", "every stage needs at least one state");
    }
  }
  if (!(design.record_interval > 0.0) || !std::isfinite(design.record_interval)) {
    add("design.record_interval", "record interval must be positive and finite");
  }
  if (design.removal_threshold < 1) add("design.removal_threshold", "removal threshold must be >= 1");
  if (design.groups < 1) add("design.groups", "at least one group is required");
  return issues;
}

std::vector<ValidationIssue> validate(const StudyDesign& design, const GroupParams& params) {
  auto issues = validate(design);
  if (!issues.empty()) return issues;

  const int m = design.stages();
  auto add = [&](ErrorCode code, std::string field, std::string msg) {
    issues.push_back({code, std::move(field), std::move(msg)});
  };

  if (params.groups() != design.groups) {
    add(ErrorCode::ShapeMismatch, "params.groups",
        "expected " + std::to_string(design.groups) + " groups, got " +
            std::to_string(params.groups()));
  }
  if (static_cast<int>(params.transitions.size()) != params.groups()) {
    add(ErrorCode::ShapeMismatch, "params.transitions", "one transition list per group is required");
  }
  if (!params.initial.empty() && static_cast<int>(params.initial.size()) != params.groups()) {
    add(ErrorCode::ShapeMismatch, "params.initial", "initial distributions must be given per group");
  }

  const std::size_t expected_rates =
      params.rate_mode == RateMode::EqualRate ? 1u : static_cast<std::size_t>(m - 1);
  for (int k = 0; k < params.groups(); ++k) {
    const std::string g = "groups[" + std::to_string(k) + "]";
    const auto& rates = params.rates[static_cast<std::size_t>(k)];
    if (rates.size() != expected_rates) {
      add(ErrorCode::ShapeMismatch, g + ".rates",
          "expected " + std::to_string(expected_rates) + " rates, got " + std::to_string(rates.size()));
    }
    for (std::size_t r = 0; r < rates.size(); ++r) {
      if (!(rates[r] > 0.0) || !std::isfinite(rates[r])) {
        add(ErrorCode::NonPositiveRate, g + ".rates[" + std::to_string(r) + "]",
            "rate must be positive and finite");
      }
    }

    if (k < static_cast<int>(params.transitions.size())) {
      const auto& mats = params.transitions[static_cast<std::size_t>(k)];
      if (static_cast<int>(mats.size()) != m - 1) {
        add(ErrorCode::ShapeMismatch, g + ".transitions",
            "expected " + std::to_string(m - 1) + " transition matrices");
      } else {
        for (int i = 1; i < m; ++i) {
          const Matrix& p = mats[static_cast<std::size_t>(i - 1)];
          const std::string f = g + ".transitions[" + std::to_string(i - 1) + "]";
          const int rows = design.states[static_cast<std::size_t>(i - 1)];
          const int cols = design.states[static_cast<std::size_t>(i)];
          if (p.rows() != rows || p.cols() != cols) {
            std::ostringstream os;
            os << "expected " << rows << "x" << cols << ", got " << p.rows() << "x" << p.cols();
            add(ErrorCode::ShapeMismatch, f, os.str());
            continue;
          }
          for (int u = 0; u < rows; ++u) {
            bool entries_ok = true;
            for (int j = 0; j < cols; ++j) {
              const double v = p(u, j);
              if (!(v >= 0.0 && v <= 1.0)) entries_ok = false;
            }
            const double sum = p.row(u).sum();
            if (!entries_ok || !(std::abs(sum - 1.0) <= kRowSumTolerance)) {
              std::ostringstream os;
              os.precision(17);
              os << "group " << k << ", stage " << i << ", row " << u
                 << ": entries must lie in [0,1] and sum to 1 (sum = " << sum << ")";
              add(ErrorCode::RowSumViolation, f + ".row[" + std::to_string(u) + "]", os.str());
            }
          }
        }
      }
    }

    if (k < static_cast<int>(params.initial.size()) && !params.initial[static_cast<std::size_t>(k)].empty()) {
      const auto& init = params.initial[static_cast<std::size_t>(k)];
      if (static_cast<int>(init.size()) != design.states[0]) {
        add(ErrorCode::ShapeMismatch, g + ".initial", "initial distribution must cover stage-0 states");
      } else {
        double sum = 0.0;
        bool ok = true;
        for (double v : init) {
          if (!(v >= 0.0 && v <= 1.0)) ok = false;
          sum += v;
        }
        if (!ok || !(std::abs(sum - 1.0) <= kRowSumTolerance)) {
          add(ErrorCode::RowSumViolation, g + ".initial", "initial distribution must sum to 1");
        }
      }
    }
  }
  return issues;
}

void require_valid(const std::vector<ValidationIssue>& issues) {
  if (issues.empty()) return;
  std::string msg;
  for (const auto& issue : issues) {
    if (!msg.empty()) msg += "; ";
    msg += issue.field + ": " + issue.message;
  }
  throw Error(issues.front().code, msg);
}

void check_path(const StudyDesign& design, const PathObservation& path) {
  const int m = design.stages();
  const int n = design.removal_threshold;
  if (path.group < 0 || path.group >= design.groups) inconsistent("group index out of range");
  if (path.visits.empty()) inconsistent("path has no visits");
  const int last = static_cast<int>(path.visits.size()) - 1;
  for (int idx = 0; idx <= last; ++idx) {
    const Visit& v = path.visits[static_cast<std::size_t>(idx)];
    if (v.stage != idx) {
      inconsistent("visit " + std::to_string(idx) + " is at stage " + std::to_string(v.stage) +
                   "; stages must be 0,1,2,... without gaps");
    }
    if (v.stage >= m) inconsistent("visit beyond the final stage");
    if (v.state < 0 || v.state >= design.states[static_cast<std::size_t>(v.stage)]) {
      inconsistent("state " + std::to_string(v.state) + " out of range at stage " + std::to_string(v.stage));
    }
    if (v.records < 1) inconsistent("record count must be >= 1");
    if (idx < last && v.records > n) {
      inconsistent("visit at stage " + std::to_string(v.stage) + " has " + std::to_string(v.records) +
                   " records but the path moved on (at most n are possible)");
    }
  }
  const Visit& tail = path.visits.back();
  if (path.terminal == Terminal::ReachedFinal) {
    if (tail.stage != m - 1) inconsistent("a path that reached the final stage must end there");
    if (tail.records != 1) inconsistent("the final-stage visit must have exactly one record");
  } else {
    if (tail.stage >= m - 1) inconsistent("a removed path cannot end at the final stage");
    if (tail.records != n + 1) {
      inconsistent("a removed path must end with n+1 records, got " + std::to_string(tail.records));
    }
  }
}

std::vector<std::int64_t> Dataset::group_sizes() const {
  std::vector<std::int64_t> sizes(static_cast<std::size_t>(std::max(design.groups, 0)), 0);
  for (const auto& p : paths) {
    if (p.group >= 0 && p.group < design.groups) ++sizes[static_cast<std::size_t>(p.group)];
  }
  return sizes;
}

std::int64_t GroupStats::total_idle() const {
  std::int64_t sum = 0;
  for (auto w : idle) sum += w;
  return sum;
}

std::int64_t GroupStats::interior_arrivals() const {
  std::int64_t sum = 0;
  for (std::size_t i = 1; i + 1 < arrivals.size(); ++i) sum += arrivals[i];
  return sum;
}

std::int64_t GroupStats::row_total(int stage, int from_state) const {
  return moves.at(static_cast<std::size_t>(stage - 1)).row(from_state).sum();
}

GroupStats& GroupStats::operator+=(const GroupStats& other) {
  if (idle.size() != other.idle.size() || final_states.size() != other.final_states.size() ||
      moves.size() != other.moves.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cannot add statistics of different designs");
  }
  for (std::size_t i = 0; i < idle.size(); ++i) idle[i] += other.idle[i];
  for (std::size_t i = 0; i < arrivals.size(); ++i) arrivals[i] += other.arrivals[i];
  for (std::size_t u = 0; u < final_states.size(); ++u) final_states[u] += other.final_states[u];
  for (std::size_t i = 0; i < moves.size(); ++i) {
    if (moves[i].rows() != other.moves[i].rows() || moves[i].cols() != other.moves[i].cols()) {
      throw Error(ErrorCode::ShapeMismatch, "cannot add statistics of different designs");
    }
    moves[i] += other.moves[i];
  }
  paths += other.paths;
  return *this;
}

bool operator==(const GroupStats& a, const GroupStats& b) {
  return a.idle == b.idle && a.arrivals == b.arrivals && a.final_states == b.final_states &&
         a.paths == b.paths && same_counts(a.moves, b.moves);
}

SufficientStats& SufficientStats::operator+=(const SufficientStats& other) {
  if (states != other.states || groups.size() != other.groups.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cannot add statistics of different designs");
  }
  for (std::size_t k = 0; k < groups.size(); ++k) groups[k] += other.groups[k];
  return *this;
}

GroupStats empty_group_stats(const std::vector<int>& states) {
  const std::size_t m = states.size();
  GroupStats g;
  g.idle.assign(m - 1, 0);
  g.arrivals.assign(m, 0);
  g.final_states.assign(static_cast<std::size_t>(states.back()), 0);
  for (std::size_t i = 1; i < m; ++i) {
    g.moves.push_back(CountMatrix::Zero(states[i - 1], states[i]));
  }
  return g;
}

SufficientStats empty_stats(const StudyDesign& design) {
  require_valid(validate(design));
  SufficientStats stats;
  stats.states = design.states;
  stats.groups.assign(static_cast<std::size_t>(design.groups), empty_group_stats(design.states));
  return stats;
}

SufficientStats extract_sufficient_stats(const Dataset& data) {
  SufficientStats stats = empty_stats(data.design);
  const int m = data.design.stages();
  for (const auto& path : data.paths) {
    check_path(data.design, path);
    GroupStats& g = stats.groups[static_cast<std::size_t>(path.group)];
    ++g.paths;
    ++g.arrivals[0];
    for (std::size_t idx = 0; idx < path.visits.size(); ++idx) {
      const Visit& v = path.visits[idx];
      if (v.stage > 0) {
        ++g.arrivals[static_cast<std::size_t>(v.stage)];
        const Visit& prev = path.visits[idx - 1];
        ++g.moves[static_cast<std::size_t>(v.stage - 1)](prev.state, v.state);
      }
      if (v.stage == m - 1) {
        ++g.final_states[static_cast<std::size_t>(v.state)];
      } else {
        g.idle[static_cast<std::size_t>(v.stage)] += v.records - 1;
      }
    }
  }
  return stats;
}

}  // namespace stagewalk
