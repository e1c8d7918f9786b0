#include <gtest/gtest.h>

#include <cmath>

#include "sip/coupling.hpp"
#include "sip/exact.hpp"
#include "sip/stats.hpp"

using namespace sip;

TEST(CoupledRates, ChannelTable) {
  const CoupledState s(LabeledPositions{0, 1, 1}, LabeledPositions{0, 4, 9});
  const auto ch = coupled_rates(s, 2.0);
  ASSERT_EQ(ch.size(), 12u);
  EXPECT_TRUE(ch[0].joint);
  EXPECT_DOUBLE_EQ(ch[0].rate, 1.0);
  EXPECT_DOUBLE_EQ(ch[2].rate, 2.0);  // label 0: two SIP particles to the right
  EXPECT_DOUBLE_EQ(ch[3].rate, 0.0);
  EXPECT_DOUBLE_EQ(ch[7].rate, 1.0);  // label 1: one to the left
  EXPECT_THROW(CoupledState(LabeledPositions{0}, LabeledPositions{0, 1}), DomainError);
}

TEST(CollisionState, BinaryAndHigherOrder) {
  EXPECT_FALSE(collision_state(LabeledPositions{0, 2, 5}).in_delta);
  const auto two = collision_state(LabeledPositions{0, 1, 5});
  EXPECT_TRUE(two.in_delta);
  EXPECT_TRUE(two.binary);
  const auto three = collision_state(LabeledPositions{0, 1, 2});
  EXPECT_TRUE(three.in_delta);
  EXPECT_FALSE(three.binary);
  const auto close = collision_state(LabeledPositions{0, 1, 3});  // third particle at distance 2 from 1
  EXPECT_TRUE(close.binary);
  const auto stacked = collision_state(LabeledPositions{0, 1, 1});
  EXPECT_FALSE(stacked.binary);
}

TEST(Coupling, SingleParticleNeverSeparates) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    RngStream rng(100 + s, 0);
    const auto res = simulate_coupling(LabeledPositions{0}, 1.0, 200.0, rng);
    EXPECT_EQ(res.state.sip, res.state.irw);
    EXPECT_EQ(res.diagnostics.sq_discrepancy[0], 0.0);
    EXPECT_EQ(res.diagnostics.martingale[0], 0.0);
  }
}

TEST(Coupling, MatchesExactCoupledGenerator) {
  // E (Y_1 - Ỹ_1)^2 at t = 1 from (0, 1) on a 15-ring: wrap-around is negligible
  const double m = 1.0, t = 1.0;
  const long sites = 15;
  const Generator g = build_coupled_ring(sites, 2, m);
  auto wrapped = [&](long d) {
    d = ((d % sites) + sites) % sites;
    return d > sites / 2 ? d - sites : d;
  };
  std::vector<double> f(g.index.size());
  for (std::size_t a = 0; a < f.size(); ++a) {
    const auto& s = g.index.state(a);
    const double d = static_cast<double>(wrapped(s[0] - s[2]));
    f[a] = d * d;
  }
  const double exact = transient_expectation(g.q, f, t, g.index.index({0, 1, 0, 1}));
  EXPECT_GT(exact, 0.01);
  const auto est = estimate_replicas(40000, RngStream(31, 0), 1, [&](std::size_t, RngStream& rng) {
    return simulate_coupling(LabeledPositions{0, 1}, m, t, rng).diagnostics.sq_discrepancy[0];
  });
  EXPECT_TRUE(est.within(exact, 4)) << est.mean() << " vs " << exact;
}

TEST(Coupling, MarginalsAreSipAndIndependentWalkers) {
  const double m = 1.0, t = 1.0;
  const Generator sip_g = build_labeled_ring(31, 2, m, true);
  const Generator irw_g = build_labeled_ring(31, 2, m, false);
  std::vector<double> f(sip_g.index.size());
  for (std::size_t a = 0; a < f.size(); ++a) f[a] = sip_g.index.state(a)[0] == sip_g.index.state(a)[1] ? 1.0 : 0.0;
  const double sip_exact = transient_expectation(sip_g.q, f, t, sip_g.index.index({0, 1}));
  const double irw_exact = transient_expectation(irw_g.q, f, t, irw_g.index.index({0, 1}));
  EstimateWithError sip_est, irw_est;
  const auto results = run_replicas(40000, RngStream(32, 0), 1, [&](std::size_t, RngStream& rng) {
    return simulate_coupling(LabeledPositions{0, 1}, m, t, rng).state;
  });
  for (const auto& s : results) {
    sip_est.add(s.sip[0] == s.sip[1] ? 1.0 : 0.0);
    irw_est.add(s.irw[0] == s.irw[1] ? 1.0 : 0.0);
  }
  EXPECT_TRUE(sip_est.within(sip_exact, 4)) << sip_est.mean() << " vs " << sip_exact;
  EXPECT_TRUE(irw_est.within(irw_exact, 4)) << irw_est.mean() << " vs " << irw_exact;
  EXPECT_GT(sip_exact, irw_exact);  // inclusion attracts
}

TEST(Coupling, MartingaleHasMeanZeroAndQuadraticVariation) {
  // E M = 0 and E M^2 = E <M, M>
  const double t = 20.0;
  EstimateWithError mean, second, qv;
  const auto diags = run_replicas(20000, RngStream(33, 0), 1, [&](std::size_t, RngStream& rng) {
    return simulate_coupling(LabeledPositions{0, 1, 3}, 1.0, t, rng).diagnostics;
  });
  for (const auto& d : diags) {
    mean.add(d.martingale[1]);
    second.add(d.martingale[1] * d.martingale[1] - d.quadratic_variation[1]);
  }
  EXPECT_TRUE(mean.within(0.0, 4)) << mean.mean();
  EXPECT_TRUE(second.within(0.0, 4)) << second.mean();
}

TEST(Coupling, DiagnosticsBookkeeping) {
  RngStream rng(34, 0);
  const auto res = simulate_coupling(LabeledPositions{0, 1}, 1.0, 50.0, rng);
  const auto& d = res.diagnostics;
  EXPECT_DOUBLE_EQ(d.elapsed, 50.0);
  EXPECT_NEAR(d.additive_at(0, 1), -d.additive_at(1, 0), 1e-9);
  EXPECT_EQ(d.additive_at(0, 0), 0.0);
  // two particles: Delta time equals the time at distance 1, all of it binary
  EXPECT_NEAR(d.quadratic_variation[0], d.occupation_delta, 1e-9);
  EXPECT_EQ(d.occupation_nonbinary, 0.0);
  const auto rep = collision_time_report(d, 50.0);
  EXPECT_NEAR(rep.frac_delta, d.occupation_delta / 50.0, 1e-15);
  EXPECT_THROW(collision_time_report(d, 0.0), DomainError);
  CouplingDiagnostics sum(2);
  sum += d;
  sum += d;
  EXPECT_DOUBLE_EQ(sum.occupation_delta, 2 * d.occupation_delta);
  EXPECT_THROW(sum += CouplingDiagnostics(3), DomainError);
}

TEST(ZChain, MatchesDifferenceOfTwoSipParticles) {
  // P(z_t = 0) from z_0 = 1, against the exact two-particle labeled SIP on a large ring
  const double m = 1.0, t = 1.5;
  const Generator g = build_labeled_ring(31, 2, m, true);
  std::vector<double> f(g.index.size());
  for (std::size_t a = 0; a < f.size(); ++a) f[a] = g.index.state(a)[0] == g.index.state(a)[1] ? 1.0 : 0.0;
  const double exact = transient_expectation(g.q, f, t, g.index.index({0, 1}));
  const auto est = estimate_replicas(40000, RngStream(35, 0), 1, [&](std::size_t, RngStream& rng) {
    return z_chain_functionals(1, m, t, rng).final_z == 0 ? 1.0 : 0.0;
  });
  EXPECT_TRUE(est.within(exact, 4)) << est.mean() << " vs " << exact;
}

TEST(ZChain, AdditiveFunctionalFromTrajectory) {
  RngStream a(36, 0), b(36, 0);
  const double horizon = 300.0;
  const auto traj = simulate_z_chain(0, 1.0, horizon, a);
  const auto f = z_chain_functionals(0, 1.0, horizon, b);
  double occ = 0, add = 0, last = 0;
  long z = traj.initial;
  for (const auto& ev : traj.events) {
    if (std::labs(z) == 1) {
      occ += ev.time - last;
      add += static_cast<double>(z) * (ev.time - last);
    }
    z = ev.to;
    last = ev.time;
  }
  if (std::labs(z) == 1) {
    occ += horizon - last;
    add += static_cast<double>(z) * (horizon - last);
  }
  EXPECT_NEAR(f.occupation_pm1, occ, 1e-9);
  EXPECT_NEAR(f.additive, add, 1e-9);
  EXPECT_EQ(f.final_z, z);
}

TEST(ZChain, SymmetricAdditiveFunctional) {
  const auto e = estimate_additive_functional(1.0, 100.0, 5000, RngStream(37, 0));
  EXPECT_GT(e.mean(), 0.0);
  EXPECT_THROW(estimate_additive_functional(1.0, 100.0, 1, RngStream(37, 0)), DomainError);
  EXPECT_THROW(ZChainSimulator(0, 1.0, -1.0), DomainError);
  EstimateWithError mean_a;
  for (std::size_t i = 0; i < 5000; ++i) {
    RngStream rng = split_stream(RngStream(38, 0), i);
    mean_a.add(z_chain_functionals(0, 1.0, 100.0, rng).additive);
  }
  EXPECT_TRUE(mean_a.within(0.0, 4));
}

TEST(AbsorbingCoupling, SingleParticleAlwaysAgrees) {
  for (std::uint64_t s = 0; s < 200; ++s) {
    RngStream rng(39, s);
    CoupledAbsorbingSimulator sim(LabeledPositions{4}, 10, 1.0);
    sim.run_until_absorbed(rng);
    EXPECT_EQ(sim.state().sip, sim.state().irw);
    const long a = sim.state().sip[0];
    EXPECT_TRUE(a == 0 || a == 11);
  }
}

TEST(AbsorbingCoupling, SipSideMatchesExactDual) {
  const long n_sites = 6;
  const double m = 1.0;
  const auto exact = dual_absorption_solve(LabeledPositions{2, 3}, n_sites, m);
  EstimateWithError both_right, irw_both_right;
  const auto states = run_replicas(40000, RngStream(40, 0), 1, [&](std::size_t, RngStream& rng) {
    CoupledAbsorbingSimulator sim(LabeledPositions{2, 3}, n_sites, m);
    sim.run_until_absorbed(rng);
    return sim.state();
  });
  for (const auto& s : states) {
    both_right.add(s.sip[0] == n_sites + 1 && s.sip[1] == n_sites + 1 ? 1.0 : 0.0);
    irw_both_right.add(s.irw[0] == n_sites + 1 && s.irw[1] == n_sites + 1 ? 1.0 : 0.0);
  }
  EXPECT_TRUE(both_right.within(exact.by_right[2], 4)) << both_right.mean() << " vs " << exact.by_right[2];
  // independent walkers: product of linear absorption probabilities x/(N+1)
  EXPECT_TRUE(irw_both_right.within(2.0 / 7.0 * 3.0 / 7.0, 4)) << irw_both_right.mean();
}
