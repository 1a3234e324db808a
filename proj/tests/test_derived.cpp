#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "stagewalk/derived.hpp"
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

// Truncated geometric law of the stay count, summed directly.
struct Brute {
  double mean = 0, second = 0;
};

Brute brute_moments(double lambda, double b, int n) {
  const double q = std::exp(-b * lambda);
  Brute out;
  double qv = 1.0;
  for (int v = 0; v <= n; ++v) {
    const double p = v < n ? qv * (1 - q) : qv;
    out.mean += (v + 1) * p;
    out.second += (v + 1.0) * (v + 1.0) * p;
    qv *= q;
  }
  return out;
}

// Printed closed form of the conditional variance.
double printed_variance(double lambda, double b, int n) {
  const double q = std::exp(-b * lambda);
  const double x = b * lambda;
  return q * (1 - (2.0 * n + 1) * std::exp(-n * x) * (1 - q) - std::exp(-(2.0 * n + 1) * x)) /
         ((1 - q) * (1 - q));
}

struct GridPoint {
  double lambda, b;
  int n, i;
};

std::vector<GridPoint> random_grid(std::uint64_t seed, int count) {
  Rng rng(seed);
  std::vector<GridPoint> out;
  for (int t = 0; t < count; ++t) {
    out.push_back({5.0 * (1.0 - rng.uniform()), 3.0 * (1.0 - rng.uniform()), 1 + static_cast<int>(rng() % 20),
                   static_cast<int>(rng() % 7)});
  }
  return out;
}

}  // namespace

TEST(AdvanceFactor, Examples) {
  EXPECT_NEAR(stage_advance_factor(1.0, 1.0, 5), std::exp(-1.0) * (1 - std::exp(-5.0)), 1e-15);
  EXPECT_NEAR(stage_advance_factor(1.0, 1.0, 5), 0.36543, 5e-5);
  EXPECT_LT(stage_advance_factor(1e-12, 1.0, 5), 1e-11);
  EXPECT_NEAR(stage_advance_factor(0.7, 2.0, 3, Convention::PaperLiteral),
              0.7 * std::exp(-1.4) * (1 - std::exp(-4.2)), 1e-15);
  EXPECT_EQ(code_of([] { stage_advance_factor(0.0, 1.0, 5); }), ErrorCode::NonPositiveRate);
}

TEST(AdvanceFactor, BoundedByInverseE) {
  for (const auto& g : random_grid(1, 1000)) {
    const double a = stage_advance_factor(g.lambda, g.b, g.n);
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, std::exp(-1.0));
  }
}

TEST(AdvanceFactor, ProcessExactMatchesContinuousClockRecording) {
  for (double lambda : {0.3, 1.0, 2.2}) {
    for (double b : {0.5, 1.0, 2.0}) {
      const auto d = make_design({1, 1, 1}, b, 4, 1);
      const auto p = equal_rate_params(d, {lambda});
      const Event e{EventKind::ReachStage, 1, 0, 0};
      EXPECT_NEAR(process_exact_advance_factor(lambda, b, 4),
                  *exact_event_probability(d, p, 0, e, IntervalPolicy::Farthest), 1e-13);
      EXPECT_NEAR(process_exact_advance_factor(lambda, b, 4) * -std::expm1(-b * lambda),
                  stage_advance_factor(lambda, b, 4), 1e-15);
    }
  }
}

TEST(ReachProbability, Examples) {
  EXPECT_EQ(reach_probability(1.0, 1.0, 5, 0, 4), 1.0);
  EXPECT_NEAR(reach_probability(1.0, 1.0, 5, 2, 4), std::pow(stage_advance_factor(1.0, 1.0, 5), 2), 1e-15);
  EXPECT_NEAR(reach_probability(1.0, 1.0, 5, 2, 4), 0.13354, 5e-5);
  EXPECT_EQ(reach_probability(0.4, 1.5, 3, 1, 4), stage_advance_factor(0.4, 1.5, 3));
  EXPECT_EQ(code_of([] { reach_probability(1.0, 1.0, 5, 3, 4); }), ErrorCode::StageOutOfRange);
  EXPECT_EQ(code_of([] { reach_probability(1.0, 1.0, 5, -1, 4); }), ErrorCode::StageOutOfRange);
}

TEST(FinalReach, Examples) {
  EXPECT_NEAR(final_reach_probability(0.8, 0.5, 3, 2, 0), 1 - std::exp(-3 * 0.5 * 0.8), 1e-15);
  EXPECT_NEAR(final_reach_probability(1.0, 1.0, 5, 3, 0), 0.36543 * 0.99326, 5e-5);
  EXPECT_NEAR(final_reach_probability(1.0, 1.0, 5, 3, 0), 0.36297, 5e-5);
  EXPECT_NEAR(final_reach_probability(1.3, 0.4, 2, 6, 4), 1 - std::exp(-2 * 0.4 * 1.3), 1e-15);
  EXPECT_EQ(code_of([] { final_reach_probability(1.0, 1.0, 5, 3, 2); }), ErrorCode::StageOutOfRange);
}

TEST(FinalReach, MonotoneInStagesAndThreshold) {
  for (const auto& g : random_grid(2, 300)) {
    for (int m = 2; m < 8; ++m) {
      EXPECT_LT(final_reach_probability(g.lambda, g.b, g.n, m + 1, 0), final_reach_probability(g.lambda, g.b, g.n, m, 0));
    }
    if (g.n * g.b * g.lambda < 30) {
      EXPECT_LT(final_reach_probability(g.lambda, g.b, g.n, 4, 0), final_reach_probability(g.lambda, g.b, g.n + 1, 4, 0));
    }
  }
}

TEST(StayPmf, HalfExample) {
  const auto pmf = stay_pmf(std::numbers::ln2, 1.0, 3, 0);
  EXPECT_EQ(pmf.at(-1), 0.0);
  EXPECT_NEAR(pmf.at(0), 0.5, 1e-15);
  EXPECT_NEAR(pmf.at(1), 0.25, 1e-15);
  EXPECT_NEAR(pmf.at(2), 0.125, 1e-15);
  EXPECT_NEAR(pmf.at(3), 0.125, 1e-15);
  EXPECT_TRUE(pmf.proper);
}

TEST(StayPmf, VanishingRateMeansNeverReached) {
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(stay_pmf(1e-14, 1.0, 4, i).at(-1), 1.0, 1e-12);
}

TEST(StayPmf, SumsToOneOnRandomGrid) {
  for (const auto& g : random_grid(3, 1000)) {
    EXPECT_NEAR(stay_pmf(g.lambda, g.b, g.n, g.i).sum(), 1.0, 1e-12);
    const auto lit = stay_pmf(g.lambda, g.b, g.n, g.i, Convention::PaperLiteral);
    if (lit.proper) EXPECT_NEAR(lit.sum(), 1.0, 1e-12);
    for (double p : stay_pmf(g.lambda, g.b, g.n, g.i).probabilities) EXPECT_GE(p, 0.0);
  }
}

TEST(StayPmf, ConditionalLawMatchesSimulation) {
  const auto d = make_design({1, 2, 2, 2}, 0.8, 4, 1);
  const double lambda = 0.9;
  const auto data = simulate_dataset(d, equal_rate_params(d, {lambda}), SimConfig{31, {100000}, IntervalPolicy::Strict, 4});
  const auto law = conditional_stay_pmf(lambda, d.record_interval, d.removal_threshold);
  for (int stage = 0; stage < 3; ++stage) {
    std::vector<double> freq(law.size(), 0.0);
    double count = 0;
    for (const auto& path : data.paths) {
      if (static_cast<int>(path.visits.size()) <= stage) continue;
      freq[static_cast<std::size_t>(path.visits[static_cast<std::size_t>(stage)].records - 1)] += 1;
      count += 1;
    }
    for (std::size_t v = 0; v < law.size(); ++v) {
      EXPECT_LE(std::abs(freq[v] / count - law[v]), 3 * std::sqrt(law[v] * (1 - law[v]) / count))
          << "stage " << stage << " w=" << v;
    }
  }
}

TEST(Moments, HalfExample) {
  const double l = std::numbers::ln2;
  EXPECT_NEAR(cond_mean_records(l, 1.0, 3), 1.875, 1e-14);
  EXPECT_NEAR(cond_second_moment(l, 1.0, 3), 4.625, 1e-14);
  EXPECT_NEAR(cond_var_records(l, 1.0, 3), 1.109375, 1e-14);
}

TEST(Moments, ZeroRateLimits) {
  for (int n : {1, 4, 17}) {
    EXPECT_EQ(cond_mean_records(0.0, 0.7, n), n + 1.0);
    EXPECT_EQ(cond_second_moment(0.0, 0.7, n), (n + 1.0) * (n + 1.0));
    EXPECT_EQ(cond_var_records(0.0, 0.7, n), 0.0);
  }
  EXPECT_NEAR(cond_mean_records(1e-12, 1.0, 5), 6.0, 1e-9);
}

TEST(Moments, FastRateLimit) {
  EXPECT_NEAR(cond_second_moment(60.0, 1.0, 5), 1.0, 1e-12);
  EXPECT_NEAR(cond_mean_records(60.0, 1.0, 5), 1.0, 1e-12);
}

TEST(Moments, MatchBruteForceOnRandomGrid) {
  for (const auto& g : random_grid(4, 1000)) {
    const auto brute = brute_moments(g.lambda, g.b, g.n);
    EXPECT_NEAR(cond_mean_records(g.lambda, g.b, g.n), brute.mean, 1e-10 * brute.mean);
    EXPECT_NEAR(cond_second_moment(g.lambda, g.b, g.n), brute.second, 1e-10 * brute.second);
    const double var = brute.second - brute.mean * brute.mean;
    EXPECT_NEAR(cond_var_records(g.lambda, g.b, g.n), var, 1e-10 * std::max(1.0, brute.second));
    // The printed form cancels catastrophically as b lambda -> 0.
    if (g.lambda * g.b > 1e-2) {
      EXPECT_NEAR(cond_var_records(g.lambda, g.b, g.n), printed_variance(g.lambda, g.b, g.n),
                  1e-10 * std::max(1.0, brute.second))
          << g.lambda << " " << g.b << " " << g.n;
    }
  }
}

TEST(Moments, GeometricLimit) {
  for (double lambda : {0.05, 0.5, 2.0}) {
    for (double b : {0.3, 1.0}) {
      const double p = -std::expm1(-b * lambda);
      const int n = 1000000;
      EXPECT_NEAR(cond_mean_records(lambda, b, n) * p, 1.0, 1e-6);
      EXPECT_NEAR(cond_var_records(lambda, b, n) / ((1 - p) / (p * p)), 1.0, 1e-6);
    }
  }
}

TEST(UnconditionalMoments, Examples) {
  const double l = std::numbers::ln2;
  const auto m0 = uncond_moments(l, 1.0, 3, 0);
  EXPECT_EQ(m0.mean, cond_mean_records(l, 1.0, 3));
  EXPECT_EQ(m0.second, cond_second_moment(l, 1.0, 3));
  EXPECT_NEAR(m0.variance, cond_var_records(l, 1.0, 3), 1e-14);

  const double a = l * 0.5 * (1 - 0.125);
  EXPECT_NEAR(stage_advance_factor(l, 1.0, 3), a, 1e-15);
  EXPECT_NEAR(a, 0.30326, 5e-5);
  const auto m1 = uncond_moments(l, 1.0, 3, 1);
  EXPECT_NEAR(m1.mean, 1.875 * a, 1e-14);
  EXPECT_NEAR(m1.mean, 0.56861, 5e-5);
  EXPECT_NEAR(m1.second, 4.625 * a, 1e-14);
  EXPECT_NEAR(m1.variance, m1.second - m1.mean * m1.mean, 1e-14);

  const auto tiny = uncond_moments(1e-14, 1.0, 3, 2);
  EXPECT_LT(tiny.mean, 1e-12);
  EXPECT_LT(tiny.second, 1e-12);
  EXPECT_LT(std::abs(tiny.variance), 1e-12);
  EXPECT_EQ(code_of([] { uncond_moments(1.0, 1.0, 3, -1); }), ErrorCode::StageOutOfRange);
}

TEST(FinalStateProbability, Examples) {
  const double tail = 1 - std::exp(-4 * 0.5 * 1.2);
  const Matrix single = rows({{0.3, 0.7}});
  EXPECT_NEAR(final_state_probability(1.2, 0.5, 4, 2, 0, single, 0), 0.3 * tail, 1e-15);
  EXPECT_NEAR(final_state_probability(1.2, 0.5, 4, 2, 0, single, 1), 0.7 * tail, 1e-15);

  const Matrix two = rows({{0.3, 0.7}, {0.6, 0.4}});
  const double a = stage_advance_factor(1.2, 0.5, 4);
  EXPECT_NEAR(final_state_probability(1.2, 0.5, 4, 3, 0, two, 0), 0.9 * a * tail, 1e-15);
  EXPECT_NEAR(final_state_probability(1.2, 0.5, 4, 3, 0, two, 1), 1.1 * a * tail, 1e-15);

  EXPECT_EQ(code_of([&] { final_state_probability(1.2, 0.5, 4, 3, 0, two, 2); }), ErrorCode::StateOutOfRange);
  Matrix undefined = two;
  undefined.row(1).setConstant(std::numeric_limits<double>::quiet_NaN());
  EXPECT_EQ(code_of([&] { final_state_probability(1.2, 0.5, 4, 3, 0, undefined, 0); }),
            ErrorCode::UndefinedTransitionRow);
}
