#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "stagewalk/derived.hpp"
#include "stagewalk/estimation.hpp"
#include "stagewalk/inference.hpp"
#include "stagewalk/rng.hpp"
#include "stagewalk/simulator.hpp"
#include "support.hpp"

using namespace stagewalk;
using namespace stagewalk::testing;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

// Final-move counts for a design whose stage m-2 has `counts.rows()` states.
GroupStats final_counts(const CountMatrix& counts) {
  GroupStats g = empty_group_stats({static_cast<int>(counts.rows()), static_cast<int>(counts.cols())});
  g.moves[0] = counts;
  g.paths = counts.sum();
  g.arrivals = {g.paths, g.paths};
  for (Eigen::Index u = 0; u < counts.cols(); ++u) g.final_states[static_cast<std::size_t>(u)] = counts.col(u).sum();
  return g;
}

// Best product over all state sequences, by brute force.
void enumerate(const GroupParams& p, const std::vector<int>& states, std::vector<int>& path, double product,
               double& best, std::vector<std::vector<int>>& all, std::vector<double>& scores) {
  const auto stage = static_cast<int>(path.size());
  if (stage == static_cast<int>(states.size())) {
    best = std::max(best, product);
    all.push_back(path);
    scores.push_back(product);
    return;
  }
  for (int s = 0; s < states[static_cast<std::size_t>(stage)]; ++s) {
    const double step = stage == 0 ? 1.0 : p.transition(0, stage)(path.back(), s);
    path.push_back(s);
    enumerate(p, states, path, product * step, best, all, scores);
    path.pop_back();
  }
}

GroupParams random_params(const StudyDesign& d, Rng& rng) {
  GroupParams p;
  p.rates = {{0.2 + 3.0 * rng.uniform()}};
  std::vector<Matrix> mats;
  for (int i = 1; i < d.stages(); ++i) {
    Matrix m(d.states[static_cast<std::size_t>(i - 1)], d.states[static_cast<std::size_t>(i)]);
    for (Eigen::Index u = 0; u < m.rows(); ++u) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        // Coarse values make exact ties common.
        m(u, j) = rng.uniform() < 0.3 ? 1.0 : static_cast<double>(1 + rng() % 4);
      }
      m.row(u) /= m.row(u).sum();
    }
    mats.push_back(m);
  }
  p.transitions = {mats};
  return p;
}

FitResult two_group_fit(const StudyDesign& d, const GroupParams& p, std::vector<std::int64_t> n, std::uint64_t seed) {
  return fit(simulate_dataset(d, p, SimConfig{seed, std::move(n)}), RateMode::EqualRate);
}

}  // namespace

TEST(PredictionInterval, WorkedExample) {
  const std::vector<double> p{0.3, 0.5};
  const auto ci = reach_count_prediction_interval(p, 100, 0.95);
  EXPECT_NEAR(ci.center, 80.0, 1e-12);
  EXPECT_NEAR(ci.half_width, 1.959963984540054 * std::sqrt(46.0), 1e-9);
  EXPECT_NEAR(std::sqrt(46.0), 6.782, 5e-4);
  EXPECT_EQ(ci.lower, 67);
  EXPECT_EQ(ci.upper, 94);
}

TEST(PredictionInterval, DegenerateProbabilities) {
  const std::vector<double> p{0.0, 1.0, 1.0};
  const auto ci = reach_count_prediction_interval(p, 40, 0.95);
  EXPECT_EQ(ci.lower, 80);
  EXPECT_EQ(ci.upper, 80);
  EXPECT_EQ(ci.half_width, 0.0);
}

TEST(PredictionInterval, ClipsToFeasibleCounts) {
  const std::vector<double> p{0.01, 0.02};
  const auto ci = reach_count_prediction_interval(p, 20, 0.95);
  EXPECT_EQ(ci.lower, 0);
  EXPECT_LE(ci.upper, 40);
}

TEST(PredictionInterval, RequiresBalancedDesign) {
  const std::vector<double> p{0.3, 0.5};
  const std::vector<std::int64_t> sizes{100, 101};
  EXPECT_EQ(code_of([&] { reach_count_prediction_interval(p, sizes, 0.95); }), ErrorCode::UnbalancedDesign);
  const std::vector<std::int64_t> equal{100, 100};
  EXPECT_EQ(reach_count_prediction_interval(p, equal, 0.95).upper, 94);
}

TEST(PredictionInterval, BinomialCoverage) {
  const std::vector<double> p{0.3, 0.5};
  const auto ci = reach_count_prediction_interval(p, 100, 0.95);
  Rng rng(2718);
  int covered = 0;
  for (int r = 0; r < 2000; ++r) {
    int count = 0;
    for (double pk : p) {
      for (int i = 0; i < 100; ++i) count += rng.bernoulli(pk) ? 1 : 0;
    }
    covered += (ci.lower <= count && count <= ci.upper) ? 1 : 0;
  }
  const double rate = covered / 2000.0;
  EXPECT_GE(rate, 0.93);
  EXPECT_LE(rate, 0.97);
}

TEST(KScoresMle, HandSum) {
  CountMatrix c(2, 2);
  c << 3, 7, 6, 4;
  const auto k = k_scores_mle(final_counts(c));
  EXPECT_NEAR(k.values(0), 0.9, 1e-15);
  EXPECT_NEAR(k.values(1), 1.1, 1e-15);
  EXPECT_NEAR(k.values.sum(), 2.0, 1e-14);
  EXPECT_EQ(k.sample_sizes, (std::vector<std::int64_t>{10, 10}));
  // Sum of the two multinomial covariances divided by the row counts.
  const double var = 0.3 * 0.7 / 10 + 0.6 * 0.4 / 10;
  EXPECT_NEAR(k.covariance(0, 0), var, 1e-15);
  EXPECT_NEAR(k.covariance(0, 1), -var, 1e-15);
  for (Eigen::Index u = 0; u < 2; ++u) EXPECT_NEAR(k.covariance.row(u).sum(), 0.0, 1e-15);
}

TEST(KScoresMle, SingleRowIsProportionVector) {
  CountMatrix c(1, 3);
  c << 2, 5, 3;
  const auto k = k_scores_mle(final_counts(c));
  EXPECT_NEAR(k.values(0), 0.2, 1e-15);
  EXPECT_NEAR(k.values(1), 0.5, 1e-15);
  EXPECT_NEAR(k.values(2), 0.3, 1e-15);
  EXPECT_TRUE(k.covariance.isApprox(k.covariance.transpose()));
  for (Eigen::Index u = 0; u < 3; ++u) EXPECT_NEAR(k.covariance.row(u).sum(), 0.0, 1e-15);
  EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(k.covariance).eigenvalues().minCoeff(), -1e-15);
}

TEST(KScoresMle, UndefinedRow) {
  CountMatrix c(2, 2);
  c << 3, 7, 0, 0;
  EXPECT_EQ(code_of([&] { k_scores_mle(final_counts(c)); }), ErrorCode::UndefinedTransitionRow);
}

TEST(KScoresSubstitute, PooledProportions) {
  CountMatrix c(2, 2);
  c << 10, 30, 20, 40;
  const auto k = k_scores_substitute(final_counts(c));
  EXPECT_NEAR(k.values(0), 0.3, 1e-15);
  EXPECT_NEAR(k.values(1), 0.7, 1e-15);
  EXPECT_NEAR(k.values.sum(), 1.0, 1e-15);
  EXPECT_NEAR(k.covariance(0, 0), 0.21 / 100, 1e-15);
  EXPECT_EQ(k.total, 100);

  CountMatrix one(2, 1);
  one << 4, 6;
  const auto k1 = k_scores_substitute(final_counts(one));
  EXPECT_EQ(k1.values(0), 1.0);
  EXPECT_EQ(k1.covariance(0, 0), 0.0);

  CountMatrix none = CountMatrix::Zero(2, 2);
  EXPECT_EQ(code_of([&] { k_scores_substitute(final_counts(none)); }), ErrorCode::EmptyStage);
}

TEST(KScoresSubstitute, StandardizedEstimateIsNearlySymmetric) {
  Rng rng(99);
  const std::vector<double> probs{0.3, 0.7};
  constexpr int kReplicates = 5000;
  constexpr int kN = 10000;
  std::vector<double> z;
  for (int r = 0; r < kReplicates; ++r) {
    CountMatrix c = CountMatrix::Zero(1, 2);
    for (int i = 0; i < kN; ++i) ++c(0, rng.categorical(probs));
    const auto k = k_scores_substitute(final_counts(c));
    z.push_back((k.values(0) - 0.3) / std::sqrt(0.21 / kN));
  }
  double mean = 0, m2 = 0, m3 = 0;
  for (double x : z) mean += x / kReplicates;
  for (double x : z) {
    m2 += (x - mean) * (x - mean) / kReplicates;
    m3 += (x - mean) * (x - mean) * (x - mean) / kReplicates;
  }
  EXPECT_LT(std::abs(m3 / std::pow(m2, 1.5)), 0.1);
  EXPECT_NEAR(m2, 1.0, 0.1);
}

TEST(Order, ParseAndFormat) {
  EXPECT_EQ(parse_order("u3<u1<u2<u0", 4), (std::vector<int>{3, 1, 2, 0}));
  EXPECT_EQ(parse_order("0 < 2 < 1", 3), (std::vector<int>{0, 2, 1}));
  EXPECT_EQ(format_order(std::vector<int>{2, 0, 1}), "u2<u0<u1");
  EXPECT_EQ(code_of([] { parse_order("u1<<u0", 2); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_order("u1<u1", 2); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_order("u0<u1", 3); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { parse_order("u0<u5", 2); }), ErrorCode::StateOutOfRange);
}

TEST(Order, ContrastsFollowDeclaredOrder) {
  CountMatrix c(1, 3);
  c << 50, 20, 30;
  const auto k = k_scores_substitute(final_counts(c));
  EXPECT_EQ(suggest_order(k), (std::vector<int>{1, 2, 0}));
  const auto oc = order_contrasts(k, std::vector<int>{1, 2, 0});
  EXPECT_NEAR(oc.mu(0), 0.1, 1e-15);
  EXPECT_NEAR(oc.mu(1), 0.2, 1e-15);
  EXPECT_EQ(oc.n, 100);
  // v = n D Cov D', D the difference operator.
  const double v00 = 100 * (k.covariance(2, 2) + k.covariance(1, 1) - 2 * k.covariance(1, 2));
  EXPECT_NEAR(oc.v(0, 0), v00, 1e-13);
  EXPECT_NEAR(oc.v(0, 0), 0.3 * 0.7 + 0.2 * 0.8 + 2 * 0.2 * 0.3, 1e-13);
}

TEST(QTest, ZeroQ2GivesOne) {
  Eigen::VectorXd mu(1);
  mu << 1.0;
  Matrix v(1, 1);
  v << 1e-6;
  const auto r = chen_szroeter_test(mu, v, 1000, QTestConfig{});
  EXPECT_EQ(r.q2, 0.0);
  EXPECT_EQ(r.q, 1.0);
}

TEST(QTest, HandComputedSingleContrast) {
  Eigen::VectorXd mu(1);
  mu << -0.02;
  Matrix v(1, 1);
  v << 0.25;
  const std::int64_t n = 400;
  const auto r = chen_szroeter_test(mu, v, n, QTestConfig{}, Hypothesis::EqualityAt, 0);
  const double theta = 2.0;
  const double k = std::pow(400.0, 0.25);
  const double psi = 0.5 * std::erfc(k * theta * -0.02 / std::sqrt(2.0));
  const double q1 = 20.0 * theta * psi * -0.02 - psi * k / 20.0;
  const double q2 = theta * psi * 0.5;
  EXPECT_NEAR(r.q1, q1, 1e-14);
  EXPECT_NEAR(r.q2, q2, 1e-14);
  EXPECT_NEAR(r.q, 0.5 * std::erfc(-(q1 / q2) / std::sqrt(2.0)), 1e-14);
  ASSERT_TRUE(r.reject.has_value());
  EXPECT_EQ(*r.reject, r.q < 0.05);
  EXPECT_FALSE(chen_szroeter_test(mu, v, n, QTestConfig{}).reject.has_value());
}

TEST(QTest, RangeAndScaleInvariance) {
  Rng rng(8);
  for (int t = 0; t < 300; ++t) {
    const int d = 1 + static_cast<int>(rng() % 4);
    Eigen::VectorXd mu(d);
    Matrix a(d, d);
    for (int i = 0; i < d; ++i) {
      mu(i) = 0.2 * rng.normal();
      for (int j = 0; j < d; ++j) a(i, j) = rng.normal();
    }
    const Matrix v = a * a.transpose() + 0.1 * Matrix::Identity(d, d);
    const std::int64_t n = 10 + static_cast<std::int64_t>(rng() % 5000);
    const auto r = chen_szroeter_test(mu, v, n, QTestConfig{});
    EXPECT_GE(r.q, 0.0);
    EXPECT_LE(r.q, 1.0);
    const double c = 0.1 + 5 * rng.uniform();
    const auto s = chen_szroeter_test(c * mu, c * c * v, n, QTestConfig{});
    EXPECT_NEAR(s.q, r.q, 1e-12);
    QTestConfig logistic;
    logistic.cdf = SmoothingCdf::Logistic;
    const auto l = chen_szroeter_test(mu, v, n, logistic);
    EXPECT_GE(l.q, 0.0);
    EXPECT_LE(l.q, 1.0);
  }
}

TEST(QTest, Errors) {
  Eigen::VectorXd mu(2);
  mu << 0.1, 0.2;
  Matrix v = Matrix::Identity(2, 2);
  v(1, 1) = 0.0;
  EXPECT_EQ(code_of([&] { chen_szroeter_test(mu, v, 100, QTestConfig{}); }), ErrorCode::SingularCovariance);
  EXPECT_EQ(code_of([&] { chen_szroeter_test(mu, Matrix::Identity(3, 3), 100, QTestConfig{}); }),
            ErrorCode::DimensionMismatch);
}

TEST(QTest, DefaultSmoothingMeetsTailCondition) {
  const std::int64_t n = 1000000;
  for (double x : {0.5, 1.0, 2.0, 10.0}) {
    Eigen::VectorXd mu(1);
    mu << x;
    QTestConfig config;
    config.theta = {1.0};
    const auto r = chen_szroeter_test(mu, Matrix::Identity(1, 1), n, config);
    EXPECT_LT(std::sqrt(static_cast<double>(n)) * r.psi[0], 1e-6);
  }
  QTestConfig config;
  EXPECT_GT(config.k_exponent, 0.0);
  EXPECT_LT(config.k_exponent, 0.5);
}

TEST(QTest, SeparatedScoresSupportDeclaredOrder) {
  CountMatrix c(1, 3);
  c << 100, 300, 600;
  const auto k = k_scores_substitute(final_counts(c));
  const auto oc = order_contrasts(k, std::vector<int>{0, 1, 2});
  EXPECT_GT(chen_szroeter_test(oc.mu, oc.v, oc.n, QTestConfig{}).q, 0.95);
  const auto wrong = order_contrasts(k, std::vector<int>{2, 1, 0});
  EXPECT_LT(chen_szroeter_test(wrong.mu, wrong.v, wrong.n, QTestConfig{}).q, 0.05);
}

TEST(MostProbablePath, GreedyCounterexample) {
  const auto d = make_design({1, 2, 2}, 1.0, 3, 1);
  GroupParams p;
  p.rates = {{0.9}};
  p.transitions = {{rows({{0.6, 0.4}}), rows({{0.5, 0.5}, {0.9, 0.1}})}};
  const auto best = most_probable_path(d, p, 0);
  EXPECT_EQ(best.states, (std::vector<int>{0, 1, 0}));
  EXPECT_NEAR(best.move_product, 0.36, 1e-15);
  const double stay = std::pow(1 - std::exp(-3 * 0.9), 3);
  EXPECT_NEAR(best.stay_factor, stay, 1e-15);
  EXPECT_NEAR(best.probability, 0.36 * stay, 1e-15);
  const auto paper = paper_path_score(d, p, 0);
  EXPECT_NEAR(paper.move_product, 0.54, 1e-15);
  EXPECT_NEAR(paper.probability, 0.54 * stay, 1e-15);
  EXPECT_FALSE(paper.feasible);
}

TEST(MostProbablePath, UniformRowsPickSmallestPath) {
  const auto d = make_design({2, 3, 3, 2}, 1.0, 3, 1);
  const auto p = equal_rate_params(d, {1.0});
  EXPECT_EQ(most_probable_path(d, p, 0).states, (std::vector<int>{0, 0, 0, 0}));
}

TEST(MostProbablePath, SingleStateStages) {
  const auto d = make_design({1, 1, 1, 1}, 0.5, 2, 1);
  const auto p = equal_rate_params(d, {1.5});
  const auto best = most_probable_path(d, p, 0);
  EXPECT_EQ(best.move_product, 1.0);
  EXPECT_NEAR(best.probability, std::pow(1 - std::exp(-1.5), 4), 1e-15);
  const auto paper = paper_path_score(d, p, 0);
  EXPECT_EQ(paper.probability, best.probability);
  EXPECT_TRUE(paper.feasible);
}

TEST(MostProbablePath, TwoStagesUseLargestEntry) {
  const auto d = make_design({2, 3}, 1.0, 2, 1);
  GroupParams p;
  p.rates = {{0.7}};
  p.transitions = {{rows({{0.2, 0.3, 0.5}, {0.1, 0.8, 0.1}})}};
  const auto paper = paper_path_score(d, p, 0);
  EXPECT_NEAR(paper.probability, 0.8 * std::pow(1 - std::exp(-1.4), 2), 1e-15);
  EXPECT_EQ(most_probable_path(d, p, 0).states, (std::vector<int>{1, 1}));
}

TEST(MostProbablePath, MatchesEnumeration) {
  Rng rng(17);
  for (int t = 0; t < 500; ++t) {
    const int m = 2 + static_cast<int>(rng() % 3);
    std::vector<int> states;
    for (int i = 0; i < m; ++i) states.push_back(1 + static_cast<int>(rng() % 3));
    const auto d = make_design(states, 1.0, 3, 1);
    const auto p = random_params(d, rng);
    double best = 0;
    std::vector<int> path;
    std::vector<std::vector<int>> all;
    std::vector<double> scores;
    enumerate(p, states, path, 1.0, best, all, scores);
    const auto dp = most_probable_path(d, p, 0);
    EXPECT_NEAR(dp.move_product, best, 1e-15);
    for (double s : scores) EXPECT_GE(dp.move_product, s * (1 - 1e-12));
    // The reported path is the first optimal one in lexicographic order.
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (scores[i] >= best * (1 - 1e-12)) {
        EXPECT_EQ(dp.states, all[i]);
        break;
      }
    }
    EXPECT_GE(paper_path_score(d, p, 0).move_product, dp.move_product * (1 - 1e-15));
  }
}

TEST(MostProbablePath, RequiresDefinedRowsAndEqualRates) {
  const auto d = make_design({2, 2}, 1.0, 3, 1);
  GroupParams p;
  p.rates = {{1.0}};
  p.transitions = {{rows({{0.5, 0.5}, {std::nan(""), std::nan("")}})}};
  EXPECT_EQ(code_of([&] { most_probable_path(d, p, 0); }), ErrorCode::UndefinedTransitionRow);
  GroupParams q;
  q.rate_mode = RateMode::PerStage;
  q.rates = {{1.0}};
  q.transitions = {{rows({{0.5, 0.5}, {0.5, 0.5}})}};
  EXPECT_EQ(code_of([&] { most_probable_path(d, q, 0); }), ErrorCode::MethodUnavailable);
}

TEST(CompareGroups, IdenticalGroupsAreSimilarUnderEveryMethod) {
  const auto d = make_design({1, 3, 3, 3}, 1.0, 5, 1);
  auto p = recovery_params({1.0});
  p.transitions[0][2] = rows({{0.1, 0.3, 0.6}, {0.2, 0.2, 0.6}, {0.1, 0.1, 0.8}});
  auto one = fit(simulate_dataset(d, p, SimConfig{5, {2000}}), RateMode::EqualRate);
  auto design2 = d;
  design2.groups = 2;
  auto stats = one.stats;
  stats.groups.push_back(stats.groups[0]);
  const auto both = fit(stats, design2, RateMode::EqualRate);
  for (auto method : {CompareMethod::MostProbablePath, CompareMethod::ReachProb, CompareMethod::KScores}) {
    const auto report = compare_groups(both, method);
    EXPECT_TRUE(report.all_similar) << to_string(method);
    ASSERT_EQ(report.pairs.size(), 1u);
    EXPECT_TRUE(report.pairs[0].similar);
  }
  const auto reach = compare_groups(both, CompareMethod::ReachProb);
  EXPECT_EQ(*reach.pairs[0].statistic, 0.0);
  EXPECT_EQ(*reach.pairs[0].p_value, 1.0);
}

TEST(CompareGroups, SeparatedRatesDifferInReachProbability) {
  const auto d = recovery_design();
  const auto f = two_group_fit(d, recovery_params({0.5, 2.0}), {2000, 2000}, 12);
  CompareOptions options;
  options.alpha = 0.01;
  const auto report = compare_groups(f, CompareMethod::ReachProb, options);
  EXPECT_FALSE(report.pairs[0].similar);
  EXPECT_LT(*report.pairs[0].p_value, 0.01);
  EXPECT_GT(std::abs(*report.pairs[0].statistic), 2.576);
}

TEST(CompareGroups, SameArgmaxDifferentProbabilities) {
  const auto d = recovery_design();
  const auto f = two_group_fit(d, recovery_params({0.5, 2.0}), {3000, 3000}, 13);
  const auto report = compare_groups(f, CompareMethod::MostProbablePath);
  EXPECT_TRUE(report.pairs[0].similar);
  EXPECT_EQ(report.groups[0].path->states, report.groups[1].path->states);
  EXPECT_NE(report.groups[0].path->probability, report.groups[1].path->probability);
  EXPECT_TRUE(report.groups[0].paper_path.has_value());
}

TEST(CompareGroups, Errors) {
  const auto d = make_design({1, 3, 3, 2}, 1.0, 5, 1);
  const auto single = fit(simulate_dataset(d, recovery_params({1.0}), SimConfig{1, {200}}), RateMode::EqualRate);
  EXPECT_EQ(code_of([&] { compare_groups(single, CompareMethod::ReachProb); }), ErrorCode::InvalidArgument);

  auto design2 = d;
  design2.groups = 2;
  auto stats = single.stats;
  stats.groups.push_back(stats.groups[0]);
  stats.groups[1].moves[2].row(0).setZero();
  const auto undefined = fit(stats, design2, RateMode::EqualRate);
  EXPECT_EQ(code_of([&] { compare_groups(undefined, CompareMethod::KScores); }), ErrorCode::MethodUnavailable);
  EXPECT_EQ(code_of([&] { compare_groups(undefined, CompareMethod::MostProbablePath); }), ErrorCode::MethodUnavailable);
  EXPECT_EQ(parse_compare_method("k-scores"), CompareMethod::KScores);
  EXPECT_EQ(code_of([] { parse_compare_method("vibes"); }), ErrorCode::InvalidArgument);
}
