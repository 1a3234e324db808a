#include "stagewalk/inference.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <string>

#include "stagewalk/derived.hpp"

namespace stagewalk {

namespace {

constexpr double kTieTolerance = 1e-12;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double psi(SmoothingCdf cdf, double x) {
  if (cdf == SmoothingCdf::Normal) return 0.5 * std::erfc(x / std::sqrt(2.0));
  return 1.0 / (1.0 + std::exp(x));
}

double z_quantile(double level) {
  const boost::math::normal_distribution<double> normal;
  return boost::math::quantile(normal, 0.5 + 0.5 * level);
}

// diag(p) - p p^T
Matrix multinomial_covariance(const Eigen::VectorXd& p) {
  Matrix sigma = -p * p.transpose();
  sigma.diagonal() += p;
  return sigma;
}

const CountMatrix& final_moves(const GroupStats& stats) {
  if (stats.moves.empty()) throw Error(ErrorCode::InvalidDesign, "design has no moves");
  return stats.moves.back();
}

void require_all_defined(const GroupParams& params, int group) {
  for (std::size_t i = 0; i < params.transitions.at(static_cast<std::size_t>(group)).size(); ++i) {
    const Matrix& p = params.transitions[static_cast<std::size_t>(group)][i];
    for (Eigen::Index u = 0; u < p.rows(); ++u) {
      if (!p.row(u).allFinite()) {
        throw Error(ErrorCode::UndefinedTransitionRow,
                    "group " + std::to_string(group) + " stage " + std::to_string(i + 1) + " row " +
                        std::to_string(u) + " is undefined");
      }
    }
  }
}

bool within_tie(double value, double best) { return value >= best * (1.0 - kTieTolerance); }

}  // namespace

CountInterval reach_count_prediction_interval(std::span<const double> probabilities, std::int64_t paths,
                                              double level) {
  if (probabilities.empty()) throw Error(ErrorCode::InvalidArgument, "at least one group is required");
  if (paths < 0) throw Error(ErrorCode::InvalidArgument, "group size must be nonnegative");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "level must be in (0, 1)");
  double sum = 0.0;
  double var = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "probabilities must lie in [0, 1]");
    sum += p;
    var += p * (1.0 - p);
  }
  const auto n = static_cast<double>(paths);
  CountInterval out;
  out.center = n * sum;
  out.half_width = z_quantile(level) * std::sqrt(n * var);
  out.raw_lower = out.center - out.half_width;
  out.raw_upper = out.center + out.half_width;
  const auto cap = static_cast<double>(probabilities.size()) * n;
  out.lower = static_cast<std::int64_t>(std::clamp(std::ceil(out.raw_lower), 0.0, cap));
  out.upper = static_cast<std::int64_t>(std::clamp(std::ceil(out.raw_upper), 0.0, cap));
  return out;
}

CountInterval reach_count_prediction_interval(std::span<const double> probabilities,
                                              std::span<const std::int64_t> group_sizes, double level) {
  if (group_sizes.size() != probabilities.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one group size per probability is required");
  }
  for (auto size : group_sizes) {
    if (size != group_sizes.front()) {
      throw Error(ErrorCode::UnbalancedDesign, "the count interval needs equal group sizes");
    }
  }
  return reach_count_prediction_interval(probabilities, group_sizes.empty() ? 0 : group_sizes.front(), level);
}

std::string_view to_string(KScoreEstimator kind) noexcept {
  return kind == KScoreEstimator::Mle ? "mle" : "substitute";
}

KScoreEstimator parse_k_score_estimator(std::string_view name) {
  if (name == "mle") return KScoreEstimator::Mle;
  if (name == "substitute") return KScoreEstimator::Substitute;
  throw Error(ErrorCode::InvalidArgument, "unknown estimator '" + std::string(name) + "'");
}

KScores k_scores_mle(const GroupStats& stats, int group) {
  const CountMatrix& counts = final_moves(stats);
  const auto s = counts.cols();
  KScores out;
  out.group = group;
  out.kind = KScoreEstimator::Mle;
  out.values = Eigen::VectorXd::Zero(s);
  out.covariance = Matrix::Zero(s, s);
  for (Eigen::Index j = 0; j < counts.rows(); ++j) {
    const auto n = counts.row(j).sum();
    if (n == 0) {
      throw Error(ErrorCode::UndefinedTransitionRow,
                  "group " + std::to_string(group) + ": no moves out of final-stage predecessor state " +
                      std::to_string(j));
    }
    const Eigen::VectorXd p = counts.row(j).cast<double>().transpose() / static_cast<double>(n);
    out.values += p;
    out.covariance += multinomial_covariance(p) / static_cast<double>(n);
    out.sample_sizes.push_back(n);
    out.total += n;
  }
  return out;
}

KScores k_scores_substitute(const GroupStats& stats, int group) {
  const CountMatrix& counts = final_moves(stats);
  const Eigen::VectorXd column = counts.colwise().sum().cast<double>().transpose();
  const auto n = counts.sum();
  if (n == 0) {
    throw Error(ErrorCode::EmptyStage, "group " + std::to_string(group) + ": no moves into the final stage");
  }
  KScores out;
  out.group = group;
  out.kind = KScoreEstimator::Substitute;
  out.values = column / static_cast<double>(n);
  out.covariance = multinomial_covariance(out.values) / static_cast<double>(n);
  out.sample_sizes = {n};
  out.total = n;
  return out;
}

KScores k_scores(const GroupStats& stats, KScoreEstimator kind, int group) {
  return kind == KScoreEstimator::Mle ? k_scores_mle(stats, group) : k_scores_substitute(stats, group);
}

std::vector<int> parse_order(std::string_view text, int states) {
  std::vector<int> order;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('<', pos), text.size());
    std::string_view token = text.substr(pos, end - pos);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (!token.empty() && token.front() == 'u') token.remove_prefix(1);
    int value = -1;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
      throw Error(ErrorCode::ParseError, "malformed order '" + std::string(text) + "'");
    }
    if (value < 0 || value >= states) {
      throw Error(ErrorCode::StateOutOfRange, "order names state " + std::to_string(value) +
                                                   " but the final stage has " + std::to_string(states));
    }
    order.push_back(value);
    pos = end + 1;
  }
  std::vector<int> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (static_cast<int>(order.size()) != states || std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw Error(ErrorCode::ParseError, "order must name each of the " + std::to_string(states) +
                                           " final states exactly once");
  }
  return order;
}

std::string format_order(std::span<const int> order) {
  std::string out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0) out += '<';
    out += 'u' + std::to_string(order[i]);
  }
  return out;
}

std::vector<int> suggest_order(const KScores& scores) {
  std::vector<int> order(static_cast<std::size_t>(scores.values.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores.values(a) < scores.values(b); });
  return order;
}

OrderContrasts order_contrasts(const KScores& scores, std::span<const int> order) {
  const auto s = scores.values.size();
  if (static_cast<Eigen::Index>(order.size()) != s || s < 2) {
    throw Error(ErrorCode::DimensionMismatch, "order must list every final state and there must be at least two");
  }
  Matrix d = Matrix::Zero(s - 1, s);
  for (Eigen::Index j = 0; j + 1 < s; ++j) {
    d(j, order[static_cast<std::size_t>(j + 1)]) = 1.0;
    d(j, order[static_cast<std::size_t>(j)]) = -1.0;
  }
  OrderContrasts out;
  out.mu = d * scores.values;
  out.n = scores.total;
  out.v = static_cast<double>(scores.total) * d * scores.covariance * d.transpose();
  return out;
}

QTestReport chen_szroeter_test(const Eigen::VectorXd& mu, const Matrix& v, std::int64_t n,
                               const QTestConfig& config, Hypothesis hypothesis, int equal_at) {
  const auto d = mu.size();
  if (d < 1 || v.rows() != d || v.cols() != d) {
    throw Error(ErrorCode::DimensionMismatch, "covariance must be square with one row per contrast");
  }
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "sample size must be at least 2");
  if (!(config.k_exponent > 0.0 && config.k_exponent < 0.5)) {
    throw Error(ErrorCode::InvalidArgument, "K(n) exponent must lie in (0, 1/2)");
  }
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must be in (0, 1)");
  if (hypothesis == Hypothesis::EqualityAt && (equal_at < 0 || equal_at >= d)) {
    throw Error(ErrorCode::InvalidArgument, "equality index out of range");
  }
  if (!config.theta.empty() && static_cast<Eigen::Index>(config.theta.size()) != d) {
    throw Error(ErrorCode::DimensionMismatch, "theta needs one entry per contrast");
  }

  QTestReport out;
  out.mu = mu;
  out.v = v;
  out.n = n;
  out.hypothesis = hypothesis;
  out.equal_at = hypothesis == Hypothesis::EqualityAt ? equal_at : -1;
  out.alpha = config.alpha;
  for (Eigen::Index j = 0; j < d; ++j) {
    if (config.theta.empty()) {
      if (!(v(j, j) > 0.0)) {
        throw Error(ErrorCode::SingularCovariance, "variance of contrast " + std::to_string(j) + " is zero");
      }
      out.theta.push_back(1.0 / std::sqrt(v(j, j)));
    } else {
      out.theta.push_back(config.theta[static_cast<std::size_t>(j)]);
    }
  }

  const auto nd = static_cast<double>(n);
  const double root_n = std::sqrt(nd);
  const double kn = std::pow(nd, config.k_exponent);
  Eigen::VectorXd psi_vec(d);
  Eigen::VectorXd delta_psi(d);
  out.q1 = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double theta = out.theta[static_cast<std::size_t>(j)];
    const double value = psi(config.cdf, kn * theta * mu(j));
    psi_vec(j) = value;
    delta_psi(j) = theta * value;
    // Lambda_n(theta mu, theta^2 v) = theta^2 v psi(K theta mu) K / sqrt(n)
    const double lambda = theta * theta * v(j, j) * value * kn / root_n;
    out.psi.push_back(value);
    out.lambda.push_back(lambda);
    out.q1 += root_n * delta_psi(j) * mu(j) - lambda;
  }
  const double q2_sq = delta_psi.dot(v * delta_psi);
  out.q2 = q2_sq > 0.0 ? std::sqrt(q2_sq) : 0.0;
  out.q = out.q2 > 0.0 ? normal_cdf(out.q1 / out.q2) : 1.0;
  if (hypothesis == Hypothesis::EqualityAt) out.reject = out.q < config.alpha;
  return out;
}

double path_stay_factor(const StudyDesign& design, const GroupParams& params, int group) {
  if (params.rate_mode != RateMode::EqualRate) {
    throw Error(ErrorCode::MethodUnavailable, "the path stay factor is defined for equal rates only");
  }
  const double rate = params.rate(group, 1);
  const double survive = -std::expm1(-design.record_interval * design.removal_threshold * rate);
  return std::pow(survive, design.stages());
}

PathScore most_probable_path(const StudyDesign& design, const GroupParams& params, int group) {
  if (group < 0 || group >= params.groups()) throw Error(ErrorCode::InvalidArgument, "group out of range");
  require_all_defined(params, group);
  const int m = design.stages();
  // best[i][u]: largest product of moves from state u of stage i to the end.
  std::vector<std::vector<double>> best(static_cast<std::size_t>(m));
  best[static_cast<std::size_t>(m - 1)].assign(static_cast<std::size_t>(design.states.back()), 1.0);
  for (int i = m - 2; i >= 0; --i) {
    const Matrix& p = params.transition(group, i + 1);
    auto& row = best[static_cast<std::size_t>(i)];
    row.assign(static_cast<std::size_t>(design.states[static_cast<std::size_t>(i)]), 0.0);
    for (Eigen::Index u = 0; u < p.rows(); ++u) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        row[static_cast<std::size_t>(u)] =
            std::max(row[static_cast<std::size_t>(u)], p(u, j) * best[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(j)]);
      }
    }
  }
  PathScore out;
  const auto& start = best[0];
  const double top = *std::max_element(start.begin(), start.end());
  int state = 0;
  while (!within_tie(start[static_cast<std::size_t>(state)], top)) ++state;
  out.states.push_back(state);
  for (int i = 1; i < m; ++i) {
    const Matrix& p = params.transition(group, i);
    const double target = best[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(state)];
    int next = 0;
    while (next + 1 < p.cols() &&
           !within_tie(p(state, next) * best[static_cast<std::size_t>(i)][static_cast<std::size_t>(next)], target)) {
      ++next;
    }
    state = next;
    out.states.push_back(state);
  }
  out.move_product = 1.0;
  for (int i = 1; i < m; ++i) {
    out.move_product *= params.transition(group, i)(out.states[static_cast<std::size_t>(i - 1)],
                                                    out.states[static_cast<std::size_t>(i)]);
  }
  out.stay_factor = path_stay_factor(design, params, group);
  out.probability = out.move_product * out.stay_factor;
  return out;
}

PaperPathScore paper_path_score(const StudyDesign& design, const GroupParams& params, int group) {
  const PathScore dp = most_probable_path(design, params, group);
  PaperPathScore out;
  out.move_product = 1.0;
  for (int i = 1; i < design.stages(); ++i) out.move_product *= params.transition(group, i).maxCoeff();
  out.probability = out.move_product * dp.stay_factor;
  out.feasible = dp.move_product >= out.move_product * (1.0 - kTieTolerance);
  return out;
}

std::string_view to_string(CompareMethod method) noexcept {
  switch (method) {
    case CompareMethod::MostProbablePath: return "most-probable-path";
    case CompareMethod::ReachProb: return "reach-prob";
    case CompareMethod::KScores: return "k-scores";
  }
  return "unknown";
}

CompareMethod parse_compare_method(std::string_view name) {
  if (name == "most-probable-path") return CompareMethod::MostProbablePath;
  if (name == "reach-prob") return CompareMethod::ReachProb;
  if (name == "k-scores") return CompareMethod::KScores;
  throw Error(ErrorCode::InvalidArgument, "unknown comparison method '" + std::string(name) + "'");
}

CompareReport compare_groups(const FitResult& fit, CompareMethod method, const CompareOptions& options) {
  const int groups = static_cast<int>(fit.groups.size());
  if (groups < 2) throw Error(ErrorCode::InvalidArgument, "comparison needs at least two groups");
  const StudyDesign& design = fit.design;
  const GroupParams params = fit.params();
  CompareReport report;
  report.method = method;
  report.groups.resize(static_cast<std::size_t>(groups));

  for (int k = 0; k < groups; ++k) {
    GroupSummary& summary = report.groups[static_cast<std::size_t>(k)];
    const GroupFit& gf = fit.groups[static_cast<std::size_t>(k)];
    try {
      switch (method) {
        case CompareMethod::MostProbablePath:
          summary.path = most_probable_path(design, params, k);
          summary.paper_path = paper_path_score(design, params, k);
          break;
        case CompareMethod::ReachProb: {
          if (fit.rate_mode != RateMode::EqualRate) {
            throw Error(ErrorCode::MethodUnavailable, "reach probabilities need an equal-rate fit");
          }
          const auto g = [&](double rate) {
            return final_reach_probability(rate, design.record_interval, design.removal_threshold,
                                           design.stages(), 0, fit.convention);
          };
          summary.reach = delta_method_ci(gf.rates[0], gf.information.at(0), gf.paths, g,
                                          1.0 - options.alpha, true);
          break;
        }
        case CompareMethod::KScores: {
          const KScores scores =
              k_scores(fit.stats.groups[static_cast<std::size_t>(k)], options.estimator, k);
          summary.order = suggest_order(scores);
          const OrderContrasts c = order_contrasts(scores, summary.order);
          summary.q = chen_szroeter_test(c.mu, c.v, c.n, options.q_config).q;
          break;
        }
      }
    } catch (const Error& e) {
      throw Error(ErrorCode::MethodUnavailable,
                  std::string(to_string(method)) + " unavailable for group " + std::to_string(k) + ": " + e.what());
    }
  }

  const boost::math::normal_distribution<double> normal;
  for (int a = 0; a < groups; ++a) {
    for (int b = a + 1; b < groups; ++b) {
      const GroupSummary& x = report.groups[static_cast<std::size_t>(a)];
      const GroupSummary& y = report.groups[static_cast<std::size_t>(b)];
      PairComparison pair;
      pair.first = a;
      pair.second = b;
      switch (method) {
        case CompareMethod::MostProbablePath:
          pair.similar = x.path->states == y.path->states;
          break;
        case CompareMethod::ReachProb: {
          const double se = std::hypot(x.reach->standard_error, y.reach->standard_error);
          const double diff = x.reach->estimate - y.reach->estimate;
          if (se > 0.0) {
            pair.statistic = diff / se;
            pair.p_value = 2.0 * boost::math::cdf(boost::math::complement(normal, std::abs(*pair.statistic)));
            pair.similar = *pair.p_value >= options.alpha;
          } else {
            pair.similar = diff == 0.0;
          }
          break;
        }
        case CompareMethod::KScores:
          pair.similar = x.order == y.order;
          break;
      }
      report.all_similar = report.all_similar && pair.similar;
      report.pairs.push_back(pair);
    }
  }
  return report;
}

}  // namespace stagewalk
