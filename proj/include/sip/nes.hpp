#pragma once

// Non-equilibrium steady state of the boundary-driven SIP(m): correlations
// through the absorbing dual, direct stationary averages, and the
// factorization of dual absorption probabilities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sip/coupling.hpp"
#include "sip/dynamics.hpp"
#include "sip/error.hpp"
#include "sip/exact.hpp"
#include "sip/lattice.hpp"
#include "sip/measures.hpp"
#include "sip/rng.hpp"
#include "sip/stats.hpp"

namespace sip {

/// rho_N(x) on {0..N+1}: rho_L at 0, rho_R at N+1.
inline double absorbed_density(long site, long n_sites, double rho_left, double rho_right) {
  if (site == 0) return rho_left;
  if (site == n_sites + 1) return rho_right;
  throw DomainError("absorbed_density: site is not absorbing");
}

/// rho_L + (rho_R - rho_L) i/(N+1)
inline double linear_profile(long site, long n_sites, double rho_left, double rho_right) {
  return rho_left + (rho_right - rho_left) * static_cast<double>(site) / static_cast<double>(n_sites + 1);
}

inline void require_sites(const LabeledPositions& xs, long n_sites) {
  if (n_sites < 1) throw DomainError("N must be >= 1");
  for (long x : xs.positions)
    if (x < 0 || x > n_sites + 1) throw RangeError("site outside {0..N+1}");
}

/// Monte Carlo of the stationary moment E D^SIP(sum delta_{x_i}, eta) =
/// E prod_i rho_N(X_i(inf)) over the absorbing dual (canonical parameters).
inline EstimateWithError nes_correlation_dual(const LabeledPositions& xs, long n_sites, double rho_left,
                                              double rho_right, double m, std::size_t replicas,
                                              const RngStream& master, unsigned threads = 1) {
  require_positive_m(m);
  require_sites(xs, n_sites);
  if (replicas < 2) throw DomainError("nes_correlation_dual: need at least 2 replicas");
  const ReservoirParams res = ReservoirParams::canonical(rho_left, rho_right, m);
  return estimate_replicas(
      replicas, master, threads,
      [&](std::size_t, RngStream& rng) {
        const auto sites = simulate_dual_absorbing(xs, n_sites, res, m, rng);
        double prod = 1;
        for (long a : sites) prod *= absorbed_density(a, n_sites, rho_left, rho_right);
        return prod;
      },
      "dual correlation");
}

/// Exact counterpart of nes_correlation_dual from the absorption law.
inline double nes_correlation_exact(const LabeledPositions& xs, long n_sites, double rho_left, double rho_right,
                                    double m) {
  require_sites(xs, n_sites);
  return dual_absorption_solve(xs, n_sites, m).correlation(rho_left, rho_right);
}

struct DirectRunOptions {
  double burn_in = -1;   // < 0: 10 N^2 / m
  double averaging = 0;  // averaging window after burn-in
  std::size_t batches = 20;
};

namespace detail {

// Time-integrates a list of site functionals into batch means.
struct NesAverager {
  const std::vector<std::vector<long>>* products;  // each observable: product of eta at listed sites / h^k
  double h;
  BatchMeans* bm;
  std::vector<double> values;

  template <class Sim>
  void advance(const Sim& sim, double dt) {
    values.resize(products->size());
    for (std::size_t k = 0; k < products->size(); ++k) {
      double v = 1;
      for (long x : (*products)[k]) v *= static_cast<double>(sim.at(x)) / h;
      values[k] = v;
    }
    bm->advance(values, dt);
  }
  template <class Sim>
  void event(const JumpEvent&, const Sim&) {}
};

}  // namespace detail

/// Time averages of prod_{x in S_k} eta_x/(m/2) in the boundary-driven chain,
/// after burn-in, with batch-means standard errors. Starts from the product
/// measure with the linear density profile.
inline std::vector<EstimateWithError> nes_direct_moments(long n_sites, double rho_left, double rho_right, double m,
                                                         const std::vector<std::vector<long>>& observables,
                                                         const DirectRunOptions& opt, RngStream& rng) {
  require_positive_m(m);
  if (n_sites < 1) throw DomainError("nes_direct_moments: N must be >= 1");
  if (!(opt.averaging > 0)) throw DomainError("nes_direct_moments: averaging time must be positive");
  for (const auto& obs : observables)
    for (long x : obs)
      if (x < 1 || x > n_sites) throw RangeError("nes_direct_moments: observable site outside {1..N}");
  const double h = m / 2;
  const ReservoirParams res = ReservoirParams::canonical(rho_left, rho_right, m);
  const SiteRange range = SiteRange::segment(n_sites);
  std::vector<double> lambda;
  for (long i = 1; i <= n_sites; ++i) {
    const double r = linear_profile(i, n_sites, rho_left, rho_right);
    lambda.push_back(r / (1 + r));
  }
  OccupationSimulator sim(sample_product_measure(ScaleProfile(1, lambda), range, m, rng), m, res);
  const double burn = opt.burn_in >= 0 ? opt.burn_in : 10.0 * static_cast<double>(n_sites * n_sites) / m;
  sim.run_until(burn, rng);
  BatchMeans bm(opt.averaging, opt.batches, observables.size());
  detail::NesAverager avg{&observables, h, &bm, {}};
  sim.run_until(burn + opt.averaging, rng, avg);
  std::vector<EstimateWithError> out;
  for (std::size_t k = 0; k < observables.size(); ++k) out.push_back(bm.estimate(k, "direct moment"));
  return out;
}

/// Per-site stationary density E eta_i/(m/2), i = 1..N, from one long run.
inline std::vector<EstimateWithError> nes_profile_direct(long n_sites, double rho_left, double rho_right, double m,
                                                         const DirectRunOptions& opt, RngStream& rng) {
  std::vector<std::vector<long>> obs;
  for (long i = 1; i <= n_sites; ++i) obs.push_back({i});
  return nes_direct_moments(n_sites, rho_left, rho_right, m, obs, opt, rng);
}

struct FactorizationRow {
  long n_sites = 0;
  std::vector<long> sites;
  double joint = 0;    // P(all labels absorbed at N+1)
  double product = 0;  // prod_i P(label i absorbed at N+1)
  double gap = 0;      // joint - product
  double se = 0;       // standard error of gap
};

/// Labeled factorization of dual absorption probabilities for particles
/// started at floor(x_i N), one row per N.
///
/// gap = P(all at N+1) - prod_i P(X_i = N+1), with a delta-method SE
/// (for n = 2 this is the covariance of the two right-absorption indicators).
inline std::vector<FactorizationRow> lep_factorization_check(const std::vector<double>& xs,
                                                             const std::vector<long>& n_list, double m,
                                                             std::size_t replicas, const RngStream& master,
                                                             unsigned threads = 1) {
  require_positive_m(m);
  if (replicas < 2) throw DomainError("lep_factorization_check: need at least 2 replicas");
  for (double x : xs)
    if (!(x >= 0 && x <= 1)) throw DomainError("lep_factorization_check: macro points must lie in [0, 1]");
  std::vector<FactorizationRow> rows;
  for (std::size_t idx = 0; idx < n_list.size(); ++idx) {
    const long n_sites = n_list[idx];
    if (n_sites < 2) throw DomainError("lep_factorization_check: N must be >= 2");
    LabeledPositions start;
    for (double x : xs) start.positions.push_back(std::min(n_sites + 1, macro_site(x, n_sites)));
    const ReservoirParams res = ReservoirParams::canonical(0, 1, m);
    const auto ind = run_replicas(replicas, split_stream(master, idx), threads, [&](std::size_t, RngStream& rng) {
      const auto sites = simulate_dual_absorbing(start, n_sites, res, m, rng);
      std::vector<double> out;
      for (long a : sites) out.push_back(a == n_sites + 1 ? 1.0 : 0.0);
      return out;
    });
    const std::size_t n = xs.size();
    std::vector<double> marg(n, 0.0);
    double joint = 0;
    for (const auto& v : ind) {
      double all = 1;
      for (std::size_t i = 0; i < n; ++i) {
        marg[i] += v[i];
        all *= v[i];
      }
      joint += all;
    }
    const double r = static_cast<double>(replicas);
    for (double& p : marg) p /= r;
    joint /= r;
    double product = 1;
    for (double p : marg) product *= p;
    // influence function of joint - prod marg
    EstimateWithError infl;
    for (const auto& v : ind) {
      double all = 1;
      for (double b : v) all *= b;
      double f = all - joint;
      for (std::size_t i = 0; i < n; ++i) {
        double others = 1;
        for (std::size_t k = 0; k < n; ++k)
          if (k != i) others *= marg[k];
        f -= others * (v[i] - marg[i]);
      }
      infl.add(f);
    }
    rows.push_back({n_sites, start.positions, joint, product, joint - product, infl.se()});
  }
  return rows;
}

/// P(some label ends at a different reservoir than its independent partner)
/// under the absorbing coupling, for particles started at floor(x_i N).
inline EstimateWithError coupled_absorption_check(const std::vector<double>& xs, long n_sites, double m,
                                                  std::size_t replicas, const RngStream& master,
                                                  unsigned threads = 1) {
  require_positive_m(m);
  if (replicas < 2) throw DomainError("coupled_absorption_check: need at least 2 replicas");
  LabeledPositions start;
  for (double x : xs) {
    if (!(x >= 0 && x <= 1)) throw DomainError("coupled_absorption_check: macro points must lie in [0, 1]");
    start.positions.push_back(std::min(n_sites + 1, macro_site(x, n_sites)));
  }
  return estimate_replicas(
      replicas, master, threads,
      [&](std::size_t, RngStream& rng) {
        CoupledAbsorbingSimulator sim(start, n_sites, m);
        sim.run_until_absorbed(rng);
        return sim.state().sip == sim.state().irw ? 0.0 : 1.0;
      },
      "discrepant absorption");
}

}  // namespace sip
