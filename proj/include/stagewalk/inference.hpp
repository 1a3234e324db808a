#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stagewalk/core_model.hpp"
#include "stagewalk/estimation.hpp"

namespace stagewalk {

struct CountInterval {
  double center = 0.0;
  double half_width = 0.0;
  double raw_lower = 0.0;
  double raw_upper = 0.0;
  std::int64_t lower = 0;
  std::int64_t upper = 0;
};

/// N sum p_k +- z sqrt(N sum p_k (1 - p_k)) for the number of paths reaching
/// the final stage in a balanced design. Both bounds are rounded up to the
/// next integer and clipped to [0, K N].
CountInterval reach_count_prediction_interval(std::span<const double> probabilities, std::int64_t paths,
                                              double level);
/// Throws UnbalancedDesign unless every group has the same size.
CountInterval reach_count_prediction_interval(std::span<const double> probabilities,
                                              std::span<const std::int64_t> group_sizes, double level);

enum class KScoreEstimator { Mle, Substitute };

std::string_view to_string(KScoreEstimator kind) noexcept;
KScoreEstimator parse_k_score_estimator(std::string_view name);

struct KScores {
  int group = 0;
  KScoreEstimator kind = KScoreEstimator::Mle;
  Eigen::VectorXd values;
  /// Covariance of the estimator itself (already divided by the counts).
  Matrix covariance;
  /// Mle: n_{m-2,j} per row; Substitute: the single total n_{m-2}.
  std::vector<std::int64_t> sample_sizes;
  std::int64_t total = 0;
};

/// K_u = sum_j n_{j,u} / n_j over the rows of the final move matrix, with
/// covariance sum_j Sigma_j / n_j, Sigma_j = diag(P_j) - P_j^T P_j.
KScores k_scores_mle(const GroupStats& stats, int group = 0);
/// Pooled proportions n_u / n with covariance Sigma / n.
KScores k_scores_substitute(const GroupStats& stats, int group = 0);
KScores k_scores(const GroupStats& stats, KScoreEstimator kind, int group = 0);

/// Parses "u0<u2<u1" or "0<2<1" (0-based final states, ascending K). Every
/// state must appear exactly once.
std::vector<int> parse_order(std::string_view text, int states);
std::string format_order(std::span<const int> order);
/// Final states sorted by increasing K (ties by index).
std::vector<int> suggest_order(const KScores& scores);

struct OrderContrasts {
  Eigen::VectorXd mu;  // K_{order[j+1]} - K_{order[j]}
  Matrix v;            // asymptotic covariance of sqrt(n) (mu_hat - mu)
  std::int64_t n = 0;
};

OrderContrasts order_contrasts(const KScores& scores, std::span<const int> order);

enum class SmoothingCdf { Normal, Logistic };

struct QTestConfig {
  SmoothingCdf cdf = SmoothingCdf::Normal;
  double k_exponent = 0.25;  // K(n) = n^k_exponent
  double alpha = 0.05;
  /// Inverse standard deviations; computed from V when empty.
  std::vector<double> theta;
};

enum class Hypothesis { AllNonnegative, EqualityAt };

struct QTestReport {
  Eigen::VectorXd mu;
  Matrix v;
  std::int64_t n = 0;
  std::vector<double> theta;
  std::vector<double> psi;
  std::vector<double> lambda;
  double q1 = 0.0;
  double q2 = 0.0;
  double q = 1.0;
  Hypothesis hypothesis = Hypothesis::AllNonnegative;
  int equal_at = -1;
  double alpha = 0.05;
  /// Set only for EqualityAt: reject iff Q < alpha.
  std::optional<bool> reject;
};

/// Smoothed inequality test of mu_j >= 0 for all j. `v` is the asymptotic
/// covariance of sqrt(n)(mu_hat - mu). With psi = 1 - F and K = K(n):
///   Psi_j = psi(K theta_j mu_j), Lambda_j = psi(K theta_j mu_j) K / sqrt(n),
///   Q1 = sqrt(n) Psi' Delta mu - sum Lambda, Q2 = sqrt(Psi' Delta V Delta Psi),
///   Q = Phi(Q1 / Q2), or 1 when Q2 = 0.
QTestReport chen_szroeter_test(const Eigen::VectorXd& mu, const Matrix& v, std::int64_t n,
                               const QTestConfig& config,
                               Hypothesis hypothesis = Hypothesis::AllNonnegative, int equal_at = -1);

struct PathScore {
  std::vector<int> states;  // one per stage, stage 0 first
  double move_product = 0.0;
  double stay_factor = 0.0;
  double probability = 0.0;
};

/// (1 - e^{-b n lambda})^m for an equal-rate group.
double path_stay_factor(const StudyDesign& design, const GroupParams& params, int group);

/// Exact maximizer of the product of consecutive transition probabilities
/// by dynamic programming, times the stay factor. Among paths within 1e-12
/// relative of the best, the lexicographically smallest state sequence wins.
PathScore most_probable_path(const StudyDesign& design, const GroupParams& params, int group);

struct PaperPathScore {
  double move_product = 0.0;
  double probability = 0.0;
  /// True when the product of per-stage maxima is attained by a real path.
  bool feasible = true;
};

/// Product over stages of the largest transition entry, times the stay factor.
PaperPathScore paper_path_score(const StudyDesign& design, const GroupParams& params, int group);

enum class CompareMethod { MostProbablePath, ReachProb, KScores };

std::string_view to_string(CompareMethod method) noexcept;
CompareMethod parse_compare_method(std::string_view name);

struct CompareOptions {
  double alpha = 0.05;
  KScoreEstimator estimator = KScoreEstimator::Mle;
  QTestConfig q_config;
};

struct PairComparison {
  int first = 0;
  int second = 1;
  bool similar = true;
  std::optional<double> statistic;
  std::optional<double> p_value;
};

struct GroupSummary {
  std::optional<PathScore> path;
  std::optional<PaperPathScore> paper_path;
  std::optional<Interval> reach;  // final-reach probability with delta-method SE
  std::vector<int> order;
  std::optional<double> q;
};

struct CompareReport {
  CompareMethod method = CompareMethod::MostProbablePath;
  std::vector<GroupSummary> groups;
  std::vector<PairComparison> pairs;
  bool all_similar = true;
};

CompareReport compare_groups(const FitResult& fit, CompareMethod method, const CompareOptions& options = {});

}  // namespace stagewalk
