#include <gtest/gtest.h>

#include <cmath>

#include "sip/exact.hpp"
#include "sip/hydro.hpp"

using namespace sip;

TEST(MacroProfile, Families) {
  const auto c = MacroProfile::constant(0.3);
  EXPECT_DOUBLE_EQ(c(-5), 0.3);
  EXPECT_DOUBLE_EQ(c.sup(), 0.3);
  const auto step = MacroProfile::smoothed_step(0.1, 0.5, 0.0, 0.1);
  EXPECT_NEAR(step(0.0), 0.3, 1e-15);
  EXPECT_NEAR(step(-5.0), 0.1, 1e-12);
  EXPECT_NEAR(step(5.0), 0.5, 1e-12);
  const auto bump = MacroProfile::gaussian_bump(0.1, 0.6, 0.5, 0.2);
  EXPECT_NEAR(bump(0.5), 0.6, 1e-15);
  EXPECT_THROW(MacroProfile::constant(1.0), DomainError);
  EXPECT_THROW(MacroProfile::smoothed_step(0.1, 0.5, 0.0, 0.0), DomainError);
}

TEST(ProfileDiscretize, PointwiseDefinition) {
  const auto c = profile_discretize(MacroProfile::constant(0.4), 10, -3, 3);
  for (long i = -3; i <= 3; ++i) EXPECT_DOUBLE_EQ(c(i), 0.4);
  const auto bump = MacroProfile::gaussian_bump(0.1, 0.6, 0.3, 0.2);
  const auto p = profile_discretize(bump, 10, 0, 10);
  EXPECT_DOUBLE_EQ(p(5), bump(0.5));
  // one-point duality moment under nu_{lambda_N} at floor(N y)
  const long x = macro_site(0.37, 10);
  EXPECT_NEAR(moment_series(1, p(x), 1.0).value, p(x) / (1 - p(x)), 1e-10);
  EXPECT_THROW(profile_discretize(bump, 0, 0, 1), DomainError);
}

TEST(HeatSolve, ConstantsAreHarmonic) {
  const LatticeField c{0, {0.7, 0.7, 0.7}, 0.7, 0.7};
  const auto out = heat_solve_discrete(c, 1.0, 12.0);
  for (long x = out.lo; x <= out.hi(); ++x) EXPECT_NEAR(out.at(x), 0.7, 1e-12);
}

TEST(HeatSolve, DeltaAndMassConservation) {
  const LatticeField delta{0, {1.0}, 0, 0};
  EXPECT_NEAR(heat_solve_discrete(delta, 2.0, 1.0).at(0), 0.308508322553671, 1e-12);
  const LatticeField bumpy{-2, {0.5, 1.0, 3.0, 0.0, 2.0}, 0, 0};
  for (double t : {0.5, 10.0, 300.0}) {
    const auto out = heat_solve_discrete(bumpy, 1.0, t);
    double mass = 0;
    for (long x = out.lo; x <= out.hi(); ++x) mass += out.at(x);
    EXPECT_NEAR(mass, 6.5, 1e-9);
  }
  EXPECT_EQ(heat_solve_discrete(bumpy, 1.0, 0.0).at(0), 3.0);
}

TEST(HeatSolve, StepAgreesWithRingTransient) {
  // two independent oracles: kernel convolution on Z and uniformization on a ring
  const double m = 1.0, t = 6.0;
  const long sites = 81;
  const LatticeField step{-3, {0.2, 0.3, 0.5, 0.9, 1.0, 1.1, 1.2}, 0.1, 1.5};
  const auto z = heat_solve_discrete(step, m, t);
  const auto g = build_labeled_ring(sites, 1, m, false);
  std::vector<double> f(sites);
  // embed Z sites [-40, 40] on the ring
  for (long y = -40; y <= 40; ++y) f[static_cast<std::size_t>(y + 40)] = step.at(y);
  const auto v = transient_expectations(g.q, f, t, 1e-12);
  for (long x = -10; x <= 10; ++x) EXPECT_NEAR(z.at(x), v[static_cast<std::size_t>(x + 40)], 1e-8) << x;
}

TEST(Vee, SingleParticleAndConstantProfileVanishIdentically) {
  const auto bump = profile_discretize(MacroProfile::gaussian_bump(0.1, 0.6, 0.0, 0.2), 10, -10, 10);
  const auto one = vee_estimate(bump, LabeledPositions{0}, 5.0, 1.0, 500, RngStream(1, 0));
  EXPECT_EQ(one.mean(), 0.0);
  EXPECT_EQ(one.se(), 0.0);
  const auto flat = ScaleProfile::constant(0.3, -5, 5);
  const auto c = vee_estimate(flat, LabeledPositions{0, 1}, 5.0, 1.0, 500, RngStream(2, 0));
  EXPECT_NEAR(c.mean(), 0.0, 1e-15);
}

TEST(Vee, IndependentArmsSelfTest) {
  const auto bump = profile_discretize(MacroProfile::gaussian_bump(0.1, 0.6, 0.0, 0.2), 10, -10, 10);
  const auto e = vee_estimate(bump, LabeledPositions{0, 1}, 5.0, 1.0, 20000, RngStream(3, 0), 1, VeeMode::irw_both);
  EXPECT_TRUE(e.within(0.0, 3)) << e.mean() << " +- " << e.se();
  EXPECT_GT(e.se(), 0.0);
}

TEST(Vee, InclusionRaisesPairMomentOnBump) {
  // two adjacent particles on a bump: SIP keeps them together near the peak
  const auto bump = profile_discretize(MacroProfile::gaussian_bump(0.05, 0.6, 0.0, 0.3), 10, -10, 10);
  const auto e = vee_estimate(bump, LabeledPositions{0, 1}, 4.0, 1.0, 20000, RngStream(4, 0));
  EXPECT_GT(e.mean(), 3 * e.se());
}

TEST(Lep, WindowAndBlocks) {
  HydroExperiment e;
  e.n_scale = 50;
  e.points = {-0.1, 0.2};
  e.t = 0.1;
  e.m = 1.0;
  const auto w = lep_window(e);
  EXPECT_EQ(w.margin, static_cast<long>(std::ceil(8 * std::sqrt(250.0))));
  EXPECT_EQ(w.lo, -5 - w.margin);
  EXPECT_EQ(w.hi, 10 + w.margin);
  e.block_lo = -0.5;
  e.block_hi = 0.5;
  e.block_width = 0.1;
  const auto blocks = lep_blocks(e);
  ASSERT_EQ(blocks.size(), 10u);
  EXPECT_EQ(blocks.front(), (std::pair<long, long>{-25, -21}));
  for (std::size_t k = 1; k < blocks.size(); ++k) EXPECT_EQ(blocks[k].first, blocks[k - 1].second + 1);
}

TEST(Lep, ConstantProfileIsStationary) {
  HydroExperiment e;
  e.n_scale = 10;
  e.profile = MacroProfile::constant(0.4);
  e.t = 0.2;
  e.m = 2.0;
  e.points = {0.0, 0.3};
  e.pairs = {{0.0, 0.3}};
  e.replicas = 4000;
  const auto rows = lep_check(e, RngStream(5, 0));
  ASSERT_EQ(rows.size(), 3u);
  const double r = 0.4 / 0.6;
  for (const auto& row : rows) {
    const double target = row.kind == "pair" ? r * r : r;
    EXPECT_NEAR(row.pde, target, 1e-12);
    EXPECT_LE(std::abs(row.estimate - target), 3 * row.se) << row.kind;
  }
}

TEST(Lep, StepProfileSmallScale) {
  HydroExperiment e;
  e.n_scale = 10;
  e.profile = MacroProfile::smoothed_step(0.1, 0.5, 0.0, 0.1);
  e.points = {-0.2, 0.0, 0.2};
  e.replicas = 4000;
  const auto rows = lep_check(e, RngStream(6, 0));
  for (const auto& row : rows) EXPECT_LE(std::abs(row.gap()), 4 * row.se) << row.y1;
}

TEST(Lep, RejectsBadExperiments) {
  HydroExperiment e;
  e.profile = MacroProfile::constant(0.85);
  EXPECT_THROW(lep_check(e, RngStream(1, 0)), DomainError);
  e.profile = MacroProfile::constant(0.3);
  e.t = 0;
  EXPECT_THROW(lep_check(e, RngStream(1, 0)), DomainError);
  e.t = 0.1;
  e.block_lo = -50;
  e.block_hi = 50;
  EXPECT_THROW(lep_check(e, RngStream(1, 0)), DomainError);
  EXPECT_THROW(lep_rms_error({}, "block"), DomainError);
}

TEST(Lep, WindowPreservesProductForm) {
  // constant lambda, matched reservoirs: single-site law stays nu_lambda
  const double lambda = 0.5, m = 1.0;
  const SiteRange range(-20, 20, BoundaryKind::segment_with_reservoirs);
  const auto profile = ScaleProfile::constant(lambda, -21, 21);
  const auto res = ReservoirParams::canonical(scale_ratio(lambda), scale_ratio(lambda), m);
  const auto finals = run_replicas(20000, RngStream(7, 0), 1, [&](std::size_t, RngStream& rng) {
    OccupationSimulator sim(sample_product_measure(profile, range, m, rng), m, res);
    sim.run_until(30.0, rng);
    return std::vector<long>{sim.at(-20), sim.at(0), sim.at(20)};
  });
  for (std::size_t site = 0; site < 3; ++site)
    for (long k = 0; k <= 3; ++k) {
      EstimateWithError freq;
      for (const auto& f : finals) freq.add(f[site] == k ? 1.0 : 0.0);
      EXPECT_TRUE(freq.within(negbin_pmf(lambda, m, k), 3.5)) << site << " " << k << " " << freq.mean();
    }
}
