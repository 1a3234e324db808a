#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stagewalk/error.hpp"

namespace stagewalk {

using Matrix = Eigen::MatrixXd;
using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class RateMode { EqualRate, PerStage };

/// Which equal-rate limit of the move contribution is used. `Corrected` is
/// lambda*b*exp(-b*lambda); `PaperLiteral` drops the factor b.
enum class Convention { Corrected, PaperLiteral };

/// Stage/state topology and observation scheme. Stages are 0-based; stage
/// stages()-1 is the absorbing final stage.
struct StudyDesign {
  std::vector<int> states;       // s_i, one entry per stage
  double record_interval = 1.0;  // b
  int removal_threshold = 1;     // n: idle intervals tolerated before removal
  int groups = 1;                // K

  [[nodiscard]] int stages() const noexcept { return static_cast<int>(states.size()); }
  [[nodiscard]] int final_stage() const noexcept { return stages() - 1; }
  [[nodiscard]] double removal_time() const noexcept {
    return removal_threshold * record_interval;
  }

  friend bool operator==(const StudyDesign&, const StudyDesign&) = default;
};

/// Rates and transition matrices for every group.
///
/// In equal-rate mode `rates[k]` holds a single rate; in per-stage mode it
/// holds lambda_1..lambda_{m-1}, where lambda_i governs the wait in stage i-1
/// before the move into stage i. `transitions[k][i-1]` is the
/// s[i-1] x s[i] matrix of moves into stage i.
struct GroupParams {
  RateMode rate_mode = RateMode::EqualRate;
  std::vector<std::vector<double>> rates;
  std::vector<std::vector<Matrix>> transitions;
  /// Optional stage-0 state distribution per group; empty means uniform.
  std::vector<std::vector<double>> initial;

  [[nodiscard]] int groups() const noexcept { return static_cast<int>(rates.size()); }
  /// lambda_stage for `group`, stage in 1..m-1.
  [[nodiscard]] double rate(int group, int stage) const;
  [[nodiscard]] const Matrix& transition(int group, int stage) const;
  [[nodiscard]] std::vector<double> initial_distribution(int group, int stage0_states) const;

  friend bool operator==(const GroupParams& a, const GroupParams& b);
};

struct ValidationIssue {
  ErrorCode code;
  std::string field;  // e.g. "groups[1].transitions[0].row[2]"
  std::string message;
};

std::vector<ValidationIssue> validate(const StudyDesign& design);
/// Every violated invariant of the design and parameters, or empty.
std::vector<ValidationIssue> validate(const StudyDesign& design, const GroupParams& params);
/// Throws the first issue's code with all issue messages joined.
void require_valid(const std::vector<ValidationIssue>& issues);

enum class Terminal { ReachedFinal, Removed };

struct Visit {
  int stage = 0;
  int state = 0;
  int records = 1;  // N = w + 1
  /// False for a stage the path passed through between two record ticks
  /// (continuous-clock simulation only). Not serialized.
  bool recorded = true;

  friend bool operator==(const Visit&, const Visit&) = default;
};

struct PathObservation {
  int group = 0;
  std::vector<Visit> visits;
  Terminal terminal = Terminal::Removed;

  friend bool operator==(const PathObservation&, const PathObservation&) = default;
};

/// Throws InconsistentPath when `path` violates the visit-sequence rules.
void check_path(const StudyDesign& design, const PathObservation& path);

struct Dataset {
  StudyDesign design;
  std::vector<PathObservation> paths;

  [[nodiscard]] std::vector<std::int64_t> group_sizes() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Counts for one group.
struct GroupStats {
  std::vector<std::int64_t> idle;          // w_i for i = 0..m-2
  std::vector<std::int64_t> arrivals;      // v_i for i = 0..m-1 (v_0 = paths)
  std::vector<std::int64_t> final_states;  // v_{m-1,u}
  std::vector<CountMatrix> moves;          // [i-1]: n_{u,i,j}, moves into stage i
  std::int64_t paths = 0;                  // N_k

  [[nodiscard]] std::int64_t total_idle() const;
  /// Sum of v_i over the interior stages 1..m-2.
  [[nodiscard]] std::int64_t interior_arrivals() const;
  [[nodiscard]] std::int64_t final_arrivals() const { return arrivals.back(); }
  /// n_{u,i}: moves out of state u of stage i-1 into stage i.
  [[nodiscard]] std::int64_t row_total(int stage, int from_state) const;

  GroupStats& operator+=(const GroupStats& other);
  friend bool operator==(const GroupStats& a, const GroupStats& b);
};

struct SufficientStats {
  std::vector<int> states;
  std::vector<GroupStats> groups;

  [[nodiscard]] int stages() const noexcept { return static_cast<int>(states.size()); }

  SufficientStats& operator+=(const SufficientStats& other);
  friend SufficientStats operator+(SufficientStats lhs, const SufficientStats& rhs) {
    lhs += rhs;
    return lhs;
  }
  friend bool operator==(const SufficientStats&, const SufficientStats&) = default;
};

GroupStats empty_group_stats(const std::vector<int>& states);
SufficientStats empty_stats(const StudyDesign& design);

SufficientStats extract_sufficient_stats(const Dataset& data);

}  // namespace stagewalk
