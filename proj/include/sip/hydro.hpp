#pragma once

// Hydrodynamic-limit experiments: macroscopic profiles, the discrete heat
// equation, V-function estimation and local-equilibrium checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "sip/coupling.hpp"
#include "sip/dynamics.hpp"
#include "sip/error.hpp"
#include "sip/lattice.hpp"
#include "sip/measures.hpp"
#include "sip/rng.hpp"
#include "sip/special.hpp"
#include "sip/stats.hpp"

namespace sip {

/// Largest scale accepted by hydrodynamic experiments (variance control).
inline constexpr double kHydroLambdaMax = 0.8;

enum class ProfileFamily { constant, smoothed_step, gaussian_bump };

inline const char* to_string(ProfileFamily f) {
  switch (f) {
    case ProfileFamily::constant: return "constant";
    case ProfileFamily::smoothed_step: return "smoothed_step";
    case ProfileFamily::gaussian_bump: return "gaussian_bump";
  }
  return "?";
}

/// Smooth macroscopic scale profile pi: R -> [0, 1).
///  constant:      pi = low
///  smoothed_step: low + (high - low) (1 + tanh((y - center)/width))/2
///  gaussian_bump: low + (high - low) exp(-(y - center)^2 / (2 width^2))
class MacroProfile {
 public:
  MacroProfile(ProfileFamily family, double low, double high = 0, double center = 0, double width = 1)
      : family_(family), low_(low), high_(family == ProfileFamily::constant ? low : high), center_(center), width_(width) {
    if (!(low_ >= 0) || !(high_ >= 0) || !(std::max(low_, high_) < 1))
      throw DomainError("MacroProfile: values must lie in [0, 1)");
    if (family != ProfileFamily::constant && !(width > 0)) throw DomainError("MacroProfile: width must be positive");
  }

  static MacroProfile constant(double value) { return MacroProfile(ProfileFamily::constant, value); }
  static MacroProfile smoothed_step(double low, double high, double center, double width) {
    return MacroProfile(ProfileFamily::smoothed_step, low, high, center, width);
  }
  static MacroProfile gaussian_bump(double base, double peak, double center, double width) {
    return MacroProfile(ProfileFamily::gaussian_bump, base, peak, center, width);
  }

  double operator()(double y) const {
    switch (family_) {
      case ProfileFamily::constant: return low_;
      case ProfileFamily::smoothed_step: return low_ + (high_ - low_) * 0.5 * (1 + std::tanh((y - center_) / width_));
      case ProfileFamily::gaussian_bump: {
        const double u = (y - center_) / width_;
        return low_ + (high_ - low_) * std::exp(-0.5 * u * u);
      }
    }
    return low_;
  }

  ProfileFamily family() const { return family_; }
  double sup() const { return std::max(low_, high_); }
  double low() const { return low_; }
  double high() const { return high_; }
  double center() const { return center_; }
  double width() const { return width_; }

 private:
  ProfileFamily family_;
  double low_, high_, center_, width_;
};

/// lambda_N(i) = pi(i/N) for i in [lo, hi].
inline ScaleProfile profile_discretize(const MacroProfile& pi, long n_scale, long lo, long hi) {
  if (n_scale < 1) throw DomainError("profile_discretize: N must be >= 1");
  if (lo > hi) throw DomainError("profile_discretize: lo > hi");
  std::vector<double> lambda;
  lambda.reserve(static_cast<std::size_t>(hi - lo + 1));
  for (long i = lo; i <= hi; ++i) lambda.push_back(pi(static_cast<double>(i) / static_cast<double>(n_scale)));
  return ScaleProfile(lo, std::move(lambda));
}

/// psi(t, x) = sum_y p_t(x - y) psi0(y), with p_t the law of a walk jumping at
/// rate m/2 in each direction. The constant extensions of psi0 are carried
/// through exactly; the result stores the sites whose value can differ from
/// the extensions.
inline LatticeField heat_solve_discrete(const LatticeField& psi0, double m, double t) {
  require_positive_m(m);
  if (!(t >= 0)) throw DomainError("heat_solve_discrete: t must be >= 0");
  if (psi0.values.empty()) return psi0;
  const WalkKernel kernel(m * t);
  const long reach = kernel.reach();
  LatticeField out{psi0.lo - reach, {}, psi0.left, psi0.right};
  const long hi = psi0.hi() + reach;
  out.values.resize(static_cast<std::size_t>(hi - out.lo + 1));
  // mass arriving from the constant extensions, via tail sums of the kernel
  std::vector<double> upper(static_cast<std::size_t>(reach) + 2, 0.0);  // upper[k] = P(X >= k), k >= 0
  for (long k = reach; k >= 0; --k)
    upper[static_cast<std::size_t>(k)] = upper[static_cast<std::size_t>(k) + 1] + kernel(k);
  auto tail_beyond = [&](long k) {  // P(X >= k) for any integer k
    if (k > reach) return 0.0;
    if (k >= 0) return upper[static_cast<std::size_t>(k)];
    return 1.0 - upper[static_cast<std::size_t>(-k) + 1];  // P(X >= k) = 1 - P(X <= k-1) = 1 - P(X >= 1-k)
  };
  for (long x = out.lo; x <= hi; ++x) {
    double s = 0;
    for (long y = std::max(psi0.lo, x - reach); y <= std::min(psi0.hi(), x + reach); ++y)
      s += kernel(x - y) * psi0.values[static_cast<std::size_t>(y - psi0.lo)];
    // y < lo  <=>  x - y >= x - lo + 1;  y > hi  <=>  y - x >= hi - x + 1
    if (psi0.left != 0) s += psi0.left * tail_beyond(x - psi0.lo + 1);
    if (psi0.right != 0) s += psi0.right * tail_beyond(psi0.hi() - x + 1);
    out.values[static_cast<std::size_t>(x - out.lo)] = s;
  }
  return out;
}

enum class VeeMode {
  coupled,  ///< SIP and independent walkers on common randomness
  irw_both  ///< independent walkers on both arms, independent streams (estimator self-test)
};

/// Estimate of V(x, t) = E_x prod_i r(Y_i(t)) - E_x prod_i r(Ỹ_i(t)), with
/// r = lambda/(1 - lambda), Y the SIP particles and Ỹ independent walkers.
inline EstimateWithError vee_estimate(const ScaleProfile& lambda, const LabeledPositions& x, double t, double m,
                                      std::size_t replicas, const RngStream& master, unsigned threads = 1,
                                      VeeMode mode = VeeMode::coupled) {
  require_positive_m(m);
  if (replicas < 2) throw DomainError("vee_estimate: need at least 2 replicas");
  const LatticeField ratio = lambda.ratio_field();
  auto product = [&](const LabeledPositions& p) {
    double out = 1;
    for (long y : p.positions) out *= ratio.at(y);
    return out;
  };
  return estimate_replicas(
      replicas, master, threads,
      [&](std::size_t, RngStream& rng) {
        if (mode == VeeMode::coupled) {
          const auto res = simulate_coupling(x, m, t, rng);
          return product(res.state.sip) - product(res.state.irw);
        }
        RngStream a = split_stream(rng, 0), b = split_stream(rng, 1);
        const auto ya = replay(simulate_irw(x, m, t, a));
        const auto yb = replay(simulate_irw(x, m, t, b));
        return product(ya) - product(yb);
      },
      "V");
}

struct HydroExperiment {
  long n_scale = 25;
  MacroProfile profile = MacroProfile::smoothed_step(0.1, 0.4, 0.0, 0.1);
  double t = 0.1;  // macroscopic time; the particle system runs to N^2 t
  double m = 1.0;
  std::vector<double> points{0.0};
  std::vector<std::pair<double, double>> pairs{};
  /// Macro interval split into blocks of macro width `block_width` for
  /// block-averaged density observables; empty interval (lo >= hi) disables.
  double block_lo = 0, block_hi = 0, block_width = 0.05;
  std::size_t replicas = 10000;
};

struct LepRow {
  long n_scale = 0;
  std::string kind;  // "point", "pair" or "block"
  double y1 = 0, y2 = 0;
  double estimate = 0, se = 0, pde = 0;
  double gap() const { return estimate - pde; }
};

struct LepWindow {
  long lo = 0, hi = 0, margin = 0;
};

/// Simulation window [floor(N y_min) - M, floor(N y_max) + M], M = ceil(8 sqrt(m N^2 t)).
inline LepWindow lep_window(const HydroExperiment& e) {
  std::vector<double> ys = e.points;
  for (const auto& [a, b] : e.pairs) {
    ys.push_back(a);
    ys.push_back(b);
  }
  if (ys.empty()) ys.push_back(e.profile.center());
  const auto [mn, mx] = std::minmax_element(ys.begin(), ys.end());
  const double n = static_cast<double>(e.n_scale);
  const long margin = static_cast<long>(std::ceil(8.0 * std::sqrt(e.m * n * n * e.t)));
  return {macro_site(*mn, e.n_scale) - margin, macro_site(*mx, e.n_scale) + margin, margin};
}

/// Sites [first, last] of each block of the block grid.
inline std::vector<std::pair<long, long>> lep_blocks(const HydroExperiment& e) {
  std::vector<std::pair<long, long>> out;
  if (!(e.block_hi > e.block_lo)) return out;
  if (!(e.block_width > 0)) throw DomainError("lep_blocks: block width must be positive");
  const auto count = static_cast<long>(std::llround((e.block_hi - e.block_lo) / e.block_width));
  const double n = static_cast<double>(e.n_scale);
  for (long j = 0; j < count; ++j) {
    const long first = static_cast<long>(std::ceil(n * (e.block_lo + static_cast<double>(j) * e.block_width)));
    const long last = static_cast<long>(std::ceil(n * (e.block_lo + static_cast<double>(j + 1) * e.block_width))) - 1;
    if (last >= first) out.emplace_back(first, last);
  }
  return out;
}

/// Monte Carlo of E D(xi, eta(N^2 t)) started from nu_{lambda_N}, versus the
/// discrete heat equation at time N^2 t with psi(0) = pi/(1 - pi).
///
/// Z is replaced by the window of `lep_window`, with reservoirs at its
/// ends matched to the local scale so the exterior stays in equilibrium.
/// Pair rows compare the two-point moment with psi(y1) psi(y2).
inline std::vector<LepRow> lep_check(const HydroExperiment& e, const RngStream& master, unsigned threads = 1) {
  require_positive_m(e.m);
  if (e.n_scale < 1) throw DomainError("lep_check: N must be >= 1");
  if (!(e.t > 0)) throw DomainError("lep_check: t must be positive");
  if (e.profile.sup() > kHydroLambdaMax) throw DomainError("lep_check: profile exceeds lambda = 0.8");
  if (e.replicas < 2) throw DomainError("lep_check: need at least 2 replicas");
  const LepWindow w = lep_window(e);
  const auto blocks = lep_blocks(e);
  for (const auto& [a, b] : blocks)
    if (a <= w.lo || b >= w.hi) throw DomainError("lep_check: block grid leaves the simulation window");

  const ScaleProfile lambda = profile_discretize(e.profile, e.n_scale, w.lo - 1, w.hi + 1);
  const SiteRange range(w.lo, w.hi, BoundaryKind::segment_with_reservoirs);
  const ReservoirParams res =
      ReservoirParams::canonical(scale_ratio(lambda(w.lo - 1)), scale_ratio(lambda(w.hi + 1)), e.m);
  const double horizon = static_cast<double>(e.n_scale) * static_cast<double>(e.n_scale) * e.t;
  const double h = e.m / 2;

  std::vector<long> point_sites, pair_a, pair_b;
  for (double y : e.points) point_sites.push_back(macro_site(y, e.n_scale));
  for (const auto& [a, b] : e.pairs) {
    pair_a.push_back(macro_site(a, e.n_scale));
    pair_b.push_back(macro_site(b, e.n_scale));
    if (pair_a.back() == pair_b.back()) throw DomainError("lep_check: pair points map to the same site");
  }
  const std::size_t n_obs = point_sites.size() + pair_a.size() + blocks.size();

  auto samples = run_replicas(e.replicas, master, threads, [&](std::size_t, RngStream& rng) {
    const OccupationConfig eta0 = sample_product_measure(lambda, range, e.m, rng);
    OccupationSimulator sim(eta0, e.m, res);
    sim.run_until(horizon, rng);
    std::vector<double> obs;
    obs.reserve(n_obs);
    for (long x : point_sites) obs.push_back(static_cast<double>(sim.at(x)) / h);
    for (std::size_t k = 0; k < pair_a.size(); ++k)
      obs.push_back(static_cast<double>(sim.at(pair_a[k])) * static_cast<double>(sim.at(pair_b[k])) / (h * h));
    for (const auto& [a, b] : blocks) {
      double s = 0;
      for (long x = a; x <= b; ++x) s += static_cast<double>(sim.at(x));
      obs.push_back(s / (h * static_cast<double>(b - a + 1)));
    }
    return obs;
  });

  const LatticeField psi = heat_solve_discrete(lambda.ratio_field(), e.m, horizon);
  std::vector<LepRow> rows;
  std::size_t col = 0;
  auto column = [&](std::size_t c) {
    EstimateWithError est;
    for (const auto& s : samples) est.add(s[c]);
    return est;
  };
  for (std::size_t k = 0; k < point_sites.size(); ++k, ++col) {
    const auto est = column(col);
    rows.push_back({e.n_scale, "point", e.points[k], e.points[k], est.mean(), est.se(), psi.at(point_sites[k])});
  }
  for (std::size_t k = 0; k < pair_a.size(); ++k, ++col) {
    const auto est = column(col);
    rows.push_back({e.n_scale, "pair", e.pairs[k].first, e.pairs[k].second, est.mean(), est.se(),
                    psi.at(pair_a[k]) * psi.at(pair_b[k])});
  }
  for (std::size_t k = 0; k < blocks.size(); ++k, ++col) {
    const auto est = column(col);
    double ref = 0;
    for (long x = blocks[k].first; x <= blocks[k].second; ++x) ref += psi.at(x);
    ref /= static_cast<double>(blocks[k].second - blocks[k].first + 1);
    const double y1 = static_cast<double>(blocks[k].first) / static_cast<double>(e.n_scale);
    const double y2 = static_cast<double>(blocks[k].second + 1) / static_cast<double>(e.n_scale);
    rows.push_back({e.n_scale, "block", y1, y2, est.mean(), est.se(), ref});
  }
  return rows;
}

/// Root-mean-square of (estimate - pde) over the rows of one kind.
inline double lep_rms_error(const std::vector<LepRow>& rows, const std::string& kind) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.kind == kind) {
      s += r.gap() * r.gap();
      ++n;
    }
  if (n == 0) throw DomainError("lep_rms_error: no rows of kind " + kind);
  return std::sqrt(s / static_cast<double>(n));
}

}  // namespace sip
