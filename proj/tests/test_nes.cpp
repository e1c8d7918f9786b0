#include <gtest/gtest.h>

#include "sip/nes.hpp"

using namespace sip;

TEST(NesDual, EqualReservoirsGivePowersExactly) {
  const auto e = nes_correlation_dual(LabeledPositions{2, 5, 5}, 8, 0.6, 0.6, 1.0, 200, RngStream(1, 0));
  EXPECT_NEAR(e.mean(), 0.216, 1e-14);
  EXPECT_NEAR(e.se(), 0.0, 1e-14);
}

TEST(NesDual, OnePointIsLinear) {
  const auto e = nes_correlation_dual(LabeledPositions{3}, 9, 0.0, 1.0, 1.0, 20000, RngStream(2, 0));
  EXPECT_TRUE(e.within(linear_profile(3, 9, 0, 1), 3.5)) << e.mean();
}

TEST(NesDual, TwoPointAgainstExact) {
  const double exact = nes_correlation_exact(LabeledPositions{3, 7}, 10, 0.0, 1.0, 1.0);
  const auto e = nes_correlation_dual(LabeledPositions{3, 7}, 10, 0.0, 1.0, 1.0, 20000, RngStream(3, 0));
  EXPECT_TRUE(e.within(exact, 3.5)) << e.mean() << " vs " << exact;
  // exchangeability
  EXPECT_NEAR(nes_correlation_exact(LabeledPositions{7, 3}, 10, 0.0, 1.0, 1.0), exact, 1e-12);
  // positive correlations in the NESS of inclusion
  EXPECT_GT(exact, linear_profile(3, 10, 0, 1) * linear_profile(7, 10, 0, 1));
}

TEST(NesDual, Errors) {
  EXPECT_THROW(nes_correlation_dual(LabeledPositions{12}, 10, 0, 1, 1.0, 10, RngStream(1, 0)), RangeError);
  EXPECT_THROW(nes_correlation_dual(LabeledPositions{2}, 10, 0, 1, 1.0, 1, RngStream(1, 0)), DomainError);
  EXPECT_THROW(nes_correlation_dual(LabeledPositions{2}, 10, -1, 1, 1.0, 10, RngStream(1, 0)), DomainError);
  EXPECT_THROW(absorbed_density(3, 10, 0, 1), DomainError);
}

TEST(NesDirect, FlatProfileAtEquilibrium) {
  RngStream rng(4, 0);
  const auto prof = nes_profile_direct(5, 0.5, 0.5, 1.0, {-1, 20000.0, 20}, rng);
  ASSERT_EQ(prof.size(), 5u);
  for (const auto& e : prof) EXPECT_TRUE(e.within(0.5, 3.5)) << e.mean() << " +- " << e.se();
}

TEST(NesDirect, AgreesWithDualRoute) {
  RngStream rng(5, 0);
  const long n_sites = 4;
  const auto prof = nes_profile_direct(n_sites, 0.0, 1.0, 2.0, {-1, 40000.0, 20}, rng);
  for (long i = 1; i <= n_sites; ++i) {
    const auto& e = prof[static_cast<std::size_t>(i - 1)];
    EXPECT_TRUE(e.within(linear_profile(i, n_sites, 0, 1), 3.5)) << i << ": " << e.mean() << " +- " << e.se();
  }
}

TEST(NesDirect, EquilibriumTwoPointFactorizes) {
  RngStream rng(6, 0);
  const auto mom = nes_direct_moments(4, 0.8, 0.8, 1.0, {{2, 3}, {2}, {3}}, {-1, 40000.0, 20}, rng);
  EXPECT_TRUE(mom[0].within(0.64, 3.5)) << mom[0].mean() << " +- " << mom[0].se();
  RngStream rng2(7, 0);
  EXPECT_THROW(nes_direct_moments(4, 0.8, 0.8, 1.0, {{5}}, {-1, 10.0, 20}, rng2), RangeError);
  EXPECT_THROW(nes_direct_moments(4, 0.8, 0.8, 1.0, {{1}}, {-1, 0.0, 20}, rng2), DomainError);
}

TEST(Factorization, OneParticleHasNoGap) {
  const auto rows = lep_factorization_check({0.4}, {10}, 1.0, 2000, RngStream(8, 0));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].gap, 0.0, 1e-15);
}

TEST(Factorization, BothStartedAbsorbed) {
  const auto rows = lep_factorization_check({0.0, 0.0}, {10, 20}, 1.0, 500, RngStream(9, 0));
  for (const auto& r : rows) {
    EXPECT_EQ(r.gap, 0.0);
    EXPECT_EQ(r.joint, 0.0);
  }
}

TEST(Factorization, TwoParticlesAgainstExactCovariance) {
  const long n_sites = 10;
  const auto rows = lep_factorization_check({0.3, 0.6}, {n_sites}, 1.0, 40000, RngStream(10, 0));
  const auto exact = dual_absorption_solve(LabeledPositions{3, 6}, n_sites, 1.0);
  double p1 = 0, p2 = 0;
  for (const auto& [pat, p] : exact.patterns) {
    if (pat[0] == n_sites + 1) p1 += p;
    if (pat[1] == n_sites + 1) p2 += p;
  }
  const double gap = exact.by_right[2] - p1 * p2;
  EXPECT_LE(std::abs(rows[0].gap - gap), 4 * rows[0].se) << rows[0].gap << " vs " << gap;
  EXPECT_EQ(rows[0].sites, (std::vector<long>{3, 6}));
}

TEST(CoupledAbsorption, SingleParticleNeverDiscrepant) {
  const auto e = coupled_absorption_check({0.5}, 20, 1.0, 1000, RngStream(11, 0));
  EXPECT_EQ(e.mean(), 0.0);
}

TEST(CoupledAbsorption, NearBoundaryStartsRarelyDisagree) {
  const auto far = coupled_absorption_check({0.3, 0.6}, 10, 1.0, 4000, RngStream(12, 0));
  const auto near = coupled_absorption_check({0.0, 0.05}, 40, 1.0, 4000, RngStream(13, 0));
  EXPECT_LT(near.mean(), far.mean());
  EXPECT_LT(near.mean(), 0.05);
}
