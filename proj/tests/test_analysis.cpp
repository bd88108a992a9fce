#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dmmf/analysis.hpp"
#include "dmmf/harness.hpp"
#include "dmmf/mechanism.hpp"
#include "oracles.hpp"

using namespace dmmf;

namespace {

ThresholdProfile<double> fig1() { return {{0.25, 0.25, 0.25, 0.25}, {0.1, 0.2, 0.25, 0.5}}; }

ThresholdProfile<Rational> fig1_exact() {
  const Rational q(1, 4);
  return {{q, q, q, q}, {Rational(1, 10), Rational(1, 5), Rational(1, 4), Rational(1, 2)}};
}

oracle::Profile to_oracle(const ThresholdProfile<double>& p) { return {p.fair_shares, p.request_probs}; }

std::vector<AgentSet> to_groups(const oracle::OrderedPartition& part) { return part; }

}  // namespace

TEST(Stability, Singleton) {
  EXPECT_TRUE(is_stable({2}, fig1()));
  EXPECT_TRUE(is_stable({2}, fig1(), true));
}

TEST(Stability, FigureOneFullSetUnstable) {
  EXPECT_FALSE(is_stable({0, 1, 2, 3}, fig1()));
  EXPECT_FALSE(is_stable({0, 1, 2, 3}, fig1_exact()));
}

TEST(Stability, BoundaryPairStableNotStrict) {
  EXPECT_TRUE(is_stable({1, 2}, fig1()));
  EXPECT_FALSE(is_stable({1, 2}, fig1(), true));
  EXPECT_TRUE(is_stable({1, 2}, fig1_exact()));
  EXPECT_FALSE(is_stable({1, 2}, fig1_exact(), true));
}

TEST(Stability, CapIsEnforced) {
  const auto prof = ThresholdProfile<double>::symmetric(22, 0.1);
  AgentSet all(22);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_THROW(is_stable<double>(all, prof), SizeError);
  EXPECT_THROW(splitting_partition(prof), SizeError);
  EXPECT_TRUE(is_stable<double>(all, prof, false, 22));
}

TEST(Stability, ValidatesProfile) {
  const ThresholdProfile<double> bad{{0.5, 0.4}, {0.1, 0.2}};
  EXPECT_THROW(is_stable({0}, bad), ConfigError);
}

TEST(Partition, FigureOne) {
  const std::vector<AgentSet> expect{{0}, {1, 2}, {3}};
  for (const auto& part : {splitting_partition(fig1()), splitting_partition(fig1_exact())}) {
    EXPECT_EQ(part.groups, expect);
    const double slopes[] = {0.1, 0.18, 0.18, 0.27};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(part.slopes[i], slopes[i], 1e-12);
    EXPECT_EQ(part.group_of(2), 1U);
  }
}

TEST(Partition, SymmetricSingleGroup) {
  for (std::size_t n : {1, 2, 5, 9}) {
    const auto part = splitting_partition(ThresholdProfile<double>::symmetric(n, 0.3));
    ASSERT_EQ(part.groups.size(), 1U);
    for (double s : part.slopes) {
      EXPECT_NEAR(s, (1.0 - std::pow(0.7, static_cast<double>(n))) / static_cast<double>(n), 1e-14);
    }
  }
}

TEST(Partition, TwoAgentSplit) {
  const auto part = splitting_partition(ThresholdProfile<double>{{0.5, 0.5}, {0.1, 0.9}});
  const std::vector<AgentSet> expect{{0}, {1}};
  EXPECT_EQ(part.groups, expect);
  EXPECT_NEAR(part.slopes[0], 0.1, 1e-15);
  EXPECT_NEAR(part.slopes[1], 0.81, 1e-15);
}

TEST(Slopes, TrivialCases) {
  for (double s : predicted_win_slopes(ThresholdProfile<double>::symmetric(4, 0.0))) EXPECT_EQ(s, 0.0);
  EXPECT_NEAR(predicted_win_slopes(ThresholdProfile<double>{{1.0}, {0.3}})[0], 0.3, 1e-15);
}

TEST(Slopes, ConservationSweep) {
  Rng rng(101);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 10;
    const auto prof = random_profile(rng, n, trial % 2 == 0);
    const auto s = predicted_win_slopes(prof);
    double miss = 1.0;
    for (double p : prof.request_probs) miss *= 1.0 - p;
    EXPECT_NEAR(std::accumulate(s.begin(), s.end(), 0.0), 1.0 - miss, 1e-12) << describe_profile(prof);
  }
}

TEST(Partition, MatchesBruteForceOracle) {
  Rng rng(202);
  int compared = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 6;
    const auto prof = random_profile(rng, n, trial % 3 == 0);
    const auto expected = oracle::brute_force_partition(to_oracle(prof));
    ASSERT_TRUE(expected) << "oracle found no unique partition for " << describe_profile(prof);
    const auto part = splitting_partition(prof);
    EXPECT_EQ(part.groups, to_groups(*expected)) << describe_profile(prof);
    const auto slopes = oracle::slopes(to_oracle(prof), *expected);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(part.slopes[i], slopes[i], 1e-12);
    ++compared;
  }
  EXPECT_EQ(compared, 500);
}

TEST(Partition, GroupRatesIncrease) {
  Rng rng(303);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto prof = random_profile(rng, 1 + rng.next_u64() % 8, false);
    const auto part = splitting_partition(prof);
    for (std::size_t u = 1; u < part.group_rates.size(); ++u) {
      EXPECT_LT(part.group_rates[u - 1], part.group_rates[u]);
    }
    for (const auto& g : part.groups) EXPECT_TRUE(is_stable<double>(g, prof));
  }
}

TEST(Partition, RationalAgreesWithDouble) {
  Rng rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 6;
    ThresholdProfile<Rational> exact;
    ThresholdProfile<double> approx;
    std::vector<long long> w(n);
    long long total = 0;
    for (auto& x : w) total += (x = 1 + static_cast<long long>(rng.next_u64() % 9));
    for (std::size_t i = 0; i < n; ++i) {
      const long long pn = 1 + static_cast<long long>(rng.next_u64() % 99);
      exact.fair_shares.emplace_back(w[i], total);
      exact.request_probs.emplace_back(pn, 100);
      approx.fair_shares.push_back(static_cast<double>(w[i]) / static_cast<double>(total));
      approx.request_probs.push_back(static_cast<double>(pn) / 100.0);
    }
    const auto a = splitting_partition(exact);
    const auto b = splitting_partition(approx);
    EXPECT_EQ(a.groups, b.groups) << describe_profile(approx);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(a.slopes[i], b.slopes[i], 1e-12);
  }
}

TEST(Oracle, MaxRateSubsetIsStable) {
  Rng rng(505);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 7;
    const auto prof = random_profile(rng, n, trial % 2 == 0);
    AgentSet all(n);
    std::iota(all.begin(), all.end(), 0);
    const auto best = max_rate_subset<double>(all, prof);
    EXPECT_TRUE(is_stable<double>(best, prof)) << describe_profile(prof);
  }
}

TEST(Witness, ExistsExactlyWhenUnstable) {
  Rng rng(606);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + rng.next_u64() % 5;
    const auto prof = random_profile(rng, n, trial % 2 == 0);
    AgentSet all(n);
    std::iota(all.begin(), all.end(), 0);
    const auto w = find_instability_witness(prof);
    EXPECT_EQ(w.has_value(), !is_stable<double>(all, prof)) << describe_profile(prof);
    if (w) {
      const auto o = to_oracle(prof);
      std::vector<std::size_t> outside_r;
      for (std::size_t i = 0; i < n; ++i) {
        if (std::find(w->high.begin(), w->high.end(), i) == w->high.end()) outside_r.push_back(i);
      }
      const double rhs = oracle::miss(o, outside_r) * oracle::rate(o, w->high);
      EXPECT_NEAR(rhs - oracle::rate(o, w->low), w->margin, 1e-12);
      EXPECT_GT(w->margin, 0.0);
    }
  }
}

TEST(Witness, FigureOne) {
  const auto w = find_instability_witness(fig1());
  ASSERT_TRUE(w);
  EXPECT_GT(w->margin, 0.0);
}

TEST(Utility, PredictedIsSlopeTimesConditionalMean) {
  Rng rng(707);
  const auto d = ValueDistribution::finite({{0.1, 0.4}, {0.5, 0.4}, {1.0, 0.2}});
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 6;
    const auto prof = random_profile(rng, n, false);
    const std::vector<ValueDistribution> dists(n, d);
    const auto u = predicted_utility(prof, dists);
    const auto s = predicted_win_slopes(prof);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(u[i], s[i] * d.conditional_mean(prof.request_probs[i]));
  }
}

TEST(Utility, TwoPointClosedForm) {
  const double q = 0.25;
  const double eps = 1.0 / 9.0;
  const std::vector<ValueDistribution> dists(2, ValueDistribution::two_point(q, eps));
  for (double p1 = 0.3; p1 <= 1.0; p1 += 0.05) {
    for (double p2 = 0.3; p2 <= 1.0; p2 += 0.05) {
      if (std::max(p1, p2) * (1.0 - std::min(p1, p2)) > std::min(p1, p2)) continue;
      const auto u = predicted_utility({{0.5, 0.5}, {p1, p2}}, dists);
      const double shared = (1.0 - (1.0 - p1) * (1.0 - p2)) / 2.0;
      EXPECT_NEAR(u[0], shared * (q + eps * (p1 - q)) / p1, 1e-14);
      EXPECT_NEAR(u[1], shared * (q + eps * (p2 - q)) / p2, 1e-14);
    }
  }
}

TEST(Utility, FairShareSymmetric) {
  for (std::size_t n : {2, 5, 10}) {
    const double a = 1.0 / static_cast<double>(n);
    const std::vector<ValueDistribution> dists(n, ValueDistribution::uniform01());
    const auto u = predicted_utility(ThresholdProfile<double>::symmetric(n, a), dists);
    EXPECT_NEAR(u[0], (1.0 - std::pow(1.0 - a, static_cast<double>(n))) * a * (1.0 - a / 2.0), 1e-15);
  }
}

TEST(Utility, ZeroRequestIsZero) {
  const std::vector<ValueDistribution> dists(2, ValueDistribution::uniform01());
  EXPECT_EQ(predicted_utility({{0.5, 0.5}, {0.0, 0.4}}, dists)[0], 0.0);
}

TEST(Utility, ContinuousAcrossGrid) {
  const std::vector<ValueDistribution> dists(3, ValueDistribution::uniform01());
  for (double p2 : {0.2, 0.5, 0.8}) {
    double prev = predicted_utility({{1.0 / 3, 1.0 / 3, 1.0 / 3}, {0.0, p2, 0.4}}, dists)[0];
    for (int k = 1; k <= 2000; ++k) {
      const double p1 = k / 2000.0;
      const double u = predicted_utility({{1.0 / 3, 1.0 / 3, 1.0 / 3}, {p1, p2, 0.4}}, dists)[0];
      EXPECT_LT(std::abs(u - prev), 2e-3) << p1;
      prev = u;
    }
  }
}

TEST(Ideal, Values) {
  EXPECT_NEAR(ideal_utility(ValueDistribution::uniform01(), 0.2), 0.18, 1e-15);
  EXPECT_NEAR(ideal_utility(ValueDistribution::two_point(0.25, 1.0 / 9.0), 0.5), 5.0 / 18.0, 1e-15);
  const auto d = ValueDistribution::finite({{0.2, 0.5}, {0.6, 0.5}});
  EXPECT_NEAR(ideal_utility(d, 1.0), d.mean(), 1e-15);
  EXPECT_THROW(ideal_utility(d, 0.0), DomainError);
}

namespace {

Trajectory simulate(const ThresholdProfile<double>& prof, std::int64_t T, std::uint64_t seed) {
  const auto cfg = MechanismConfig::from_shares(prof.fair_shares);
  const std::vector<ValueDistribution> d(prof.n(), ValueDistribution::uniform01());
  return run(cfg, d, static_strategies(prof.request_probs), T, seed, RecordingSpec::checkpoints(1.1));
}

}  // namespace

TEST(Collapse, SingleAgentHasNoGaps) {
  const ThresholdProfile<double> prof{{1.0}, {0.4}};
  const auto d = collapse_diagnostic(simulate(prof, 1000, 1), splitting_partition(prof));
  for (std::size_t k = 0; k < d.times.size(); ++k) {
    EXPECT_EQ(d.gap_global[k], 0.0);
    EXPECT_EQ(d.gap_within_max[k], 0.0);
  }
  EXPECT_EQ(last_cross_group_inversion(d), 0);
}

TEST(Collapse, SymmetricStableEnvelope) {
  const auto prof = ThresholdProfile<double>::symmetric(4, 0.3);
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = collapse_diagnostic(simulate(prof, 1000000, seed), splitting_partition(prof));
    worst = std::max(worst, d.fitted_within_constant(1000));
  }
  EXPECT_LT(worst, 1.0);
}

TEST(Collapse, FigureOneCrossGapLinear) {
  const auto prof = fig1();
  const auto part = splitting_partition(prof);
  const auto d = collapse_diagnostic(simulate(prof, 200000, 8), part);
  // Adjacent group rates 0.4, 0.72, 1.08 -> the smallest cross gap grows at 0.32 t.
  EXPECT_NEAR(d.gap_cross_min.back() / 200000.0, 0.32, 0.02);
  EXPECT_TRUE(d.cross_linear(0.16));
  EXPECT_LT(last_cross_group_inversion(d), 200000);
  // The boundary pair {2,3} is stable but not strictly; use the looser envelope.
  EXPECT_TRUE(d.within_bounded(3.0, 1000, false));
}
