#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>

#include "sip/rng.hpp"
#include "sip/stats.hpp"

using namespace sip;

TEST(RngStream, SameSeedAndStreamReproduces) {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a(), b());
}

TEST(RngStream, DistinctStreamsDiffer) {
  const RngStream master(42, 0);
  RngStream a = split_stream(master, 0), b = split_stream(master, 1);
  int same = 0;
  for (int i = 0; i < 1000; ++i) same += a() == b();
  EXPECT_EQ(same, 0);
}

TEST(RngStream, NestedSplitsAreDeterministic) {
  const RngStream master(3, 0);
  RngStream c1 = split_stream(split_stream(master, 5), 2);
  RngStream c2 = split_stream(split_stream(master, 5), 2);
  RngStream c3 = split_stream(split_stream(master, 6), 2);
  const auto x1 = c1(), x2 = c2(), x3 = c3();
  EXPECT_EQ(x1, x2);
  EXPECT_NE(x1, x3);
}

TEST(RngStream, ChiSquareUniformity) {
  RngStream rng(2024, 1);
  const int bins = 100, draws = 1000000;
  std::vector<double> counts(bins, 0.0);
  for (int i = 0; i < draws; ++i) {
    const double u = uniform01(rng);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    counts[static_cast<std::size_t>(u * bins)] += 1;
  }
  const double e = static_cast<double>(draws) / bins;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - e) * (c - e) / e;
  // 99 degrees of freedom: the 0.999 quantile is 148.2
  EXPECT_LT(chi2, 148.2);
}

TEST(RngStream, WorksWithStdDistributions) {
  RngStream rng(1, 1);
  std::uniform_int_distribution<int> d(0, 9);
  for (int i = 0; i < 100; ++i) {
    const int x = d(rng);
    EXPECT_GE(x, 0);
    EXPECT_LE(x, 9);
  }
}

TEST(RngStream, ExponentialMean) {
  RngStream rng(8, 8);
  EstimateWithError e;
  for (int i = 0; i < 200000; ++i) e.add(exponential(rng, 4.0));
  EXPECT_TRUE(e.within(0.25, 4));
}

TEST(RngStream, SeedFromEnvironment) {
  ::setenv("SIP_SEED", "123", 1);
  EXPECT_EQ(default_seed(), 123u);
  ::unsetenv("SIP_SEED");
  EXPECT_EQ(default_seed(99), 99u);
}

TEST(EstimateWithError, MeanAndStandardError) {
  const auto e = EstimateWithError::from_samples(std::vector<double>{1, 2, 3, 4}, "x");
  EXPECT_DOUBLE_EQ(e.mean(), 2.5);
  EXPECT_NEAR(e.variance(), 5.0 / 3.0, 1e-15);
  EXPECT_NEAR(e.se(), std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
  EXPECT_EQ(e.count(), 4u);
  EXPECT_EQ(EstimateWithError().se(), 0.0);
}

TEST(EstimateWithError, MergeWithEmptyIsIdentity) {
  const auto x = EstimateWithError::from_samples(std::vector<double>{1, 5, 2}, "x");
  const auto m = merge_estimates(x, EstimateWithError("x"));
  EXPECT_EQ(m.mean(), x.mean());
  EXPECT_EQ(m.variance(), x.variance());
  EXPECT_EQ(merge_estimates(EstimateWithError(), x).count(), 3u);
}

TEST(EstimateWithError, MergeOfSinglesEqualsPair) {
  const auto a = EstimateWithError::from_samples(std::vector<double>{1.5}, "x");
  const auto b = EstimateWithError::from_samples(std::vector<double>{4.0}, "x");
  const auto pair = EstimateWithError::from_samples(std::vector<double>{1.5, 4.0}, "x");
  const auto m = merge_estimates(a, b);
  EXPECT_DOUBLE_EQ(m.mean(), pair.mean());
  EXPECT_NEAR(m.se(), pair.se(), 1e-15);
}

TEST(EstimateWithError, MergeOrderInvariance) {
  RngStream rng(77, 0);
  std::vector<EstimateWithError> parts;
  for (int p = 0; p < 8; ++p) {
    EstimateWithError e("y");
    for (int i = 0; i < 100 + 37 * p; ++i) e.add(uniform01(rng) * 10 - 3);
    parts.push_back(e);
  }
  EstimateWithError forward("y"), backward("y");
  for (const auto& p : parts) forward = merge_estimates(forward, p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) backward = merge_estimates(*it, backward);
  EstimateWithError tree = merge_estimates(merge_estimates(merge_estimates(parts[0], parts[1]), merge_estimates(parts[2], parts[3])),
                                           merge_estimates(merge_estimates(parts[4], parts[5]), merge_estimates(parts[6], parts[7])));
  EXPECT_NEAR(forward.mean(), backward.mean(), 1e-12);
  EXPECT_NEAR(forward.mean(), tree.mean(), 1e-12);
  EXPECT_NEAR(forward.se(), tree.se(), 1e-12);
  EXPECT_EQ(forward.count(), tree.count());
}

TEST(EstimateWithError, MismatchedObservablesThrow) {
  const auto a = EstimateWithError::from_samples(std::vector<double>{1}, "a");
  const auto b = EstimateWithError::from_samples(std::vector<double>{1}, "b");
  EXPECT_THROW(merge_estimates(a, b), DomainError);
}

TEST(BatchMeans, PiecewiseConstantIntegration) {
  BatchMeans bm(4.0, 4, 1);
  // value 1 on [0, 1.5), 3 on [1.5, 4)
  bm.advance(std::vector<double>{1.0}, 1.5);
  bm.advance(std::vector<double>{3.0}, 2.5);
  EXPECT_TRUE(bm.complete());
  const auto e = bm.estimate(0);
  EXPECT_EQ(e.count(), 4u);
  EXPECT_NEAR(e.mean(), (1.5 + 7.5) / 4.0, 1e-12);
  EXPECT_THROW(BatchMeans(1.0, 1, 1), DomainError);
}

TEST(Replicas, ThreadCountDoesNotChangeResults) {
  const RngStream master(9, 0);
  auto fn = [](std::size_t, RngStream& rng) { return uniform01(rng) + uniform01(rng); };
  const auto one = run_replicas(1000, master, 1, fn);
  const auto four = run_replicas(1000, master, 4, fn);
  EXPECT_EQ(one, four);
  const auto e1 = estimate_replicas(1000, master, 1, fn);
  const auto e3 = estimate_replicas(1000, master, 3, fn);
  EXPECT_EQ(e1.mean(), e3.mean());
  EXPECT_EQ(e1.se(), e3.se());
}

TEST(Replicas, LowestFailingReplicaIsRethrown) {
  const RngStream master(1, 0);
  try {
    run_replicas(50, master, 4, [](std::size_t i, RngStream&) -> int {
      if (i == 17 || i == 40) throw std::runtime_error("replica " + std::to_string(i));
      return 0;
    });
    FAIL() << "expected an exception";
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "replica 17");
  }
}
