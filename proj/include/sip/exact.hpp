#pragma once

// Exact finite-state linear algebra: generator matrices, generator-level
// duality residuals, absorption and stationary solves, and transient
// expectations by uniformization. This is the oracle layer for the Monte
// Carlo modules.
//
// Enumeration order is lexicographic: occupation vectors ascending as
// vectors, labeled states as ascending position tuples.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "sip/error.hpp"
#include "sip/lattice.hpp"
#include "sip/measures.hpp"

namespace sip {

inline constexpr std::size_t kMaxStates = 1'000'000;

using StateVec = std::vector<long>;

/// Deterministic bijection between configurations and dense indices.
class StateIndex {
 public:
  StateIndex() = default;
  explicit StateIndex(std::vector<StateVec> states) : states_(std::move(states)) {
    for (std::size_t i = 0; i < states_.size(); ++i) index_.emplace(states_[i], i);
    if (index_.size() != states_.size()) throw DomainError("StateIndex: duplicate states");
  }

  std::size_t size() const { return states_.size(); }
  const StateVec& state(std::size_t i) const { return states_[i]; }
  const std::vector<StateVec>& states() const { return states_; }

  std::size_t index(const StateVec& s) const {
    auto it = index_.find(s);
    if (it == index_.end()) throw RangeError("StateIndex: unknown state");
    return it->second;
  }
  bool contains(const StateVec& s) const { return index_.count(s) != 0; }

 private:
  std::vector<StateVec> states_;
  std::map<StateVec, std::size_t> index_;
};

/// Sparse generator: off-diagonal rates >= 0, diagonal = -(row sum of
/// off-diagonals). Rows sum to 0 for a conservative generator.
class RateMatrix {
 public:
  using Sparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;

  RateMatrix() = default;
  RateMatrix(std::size_t n, const std::vector<Eigen::Triplet<double>>& off_diagonal) : q_(to_int(n), to_int(n)) {
    std::vector<double> exit(n, 0.0);
    std::vector<Eigen::Triplet<double>> all;
    all.reserve(off_diagonal.size() + n);
    for (const auto& t : off_diagonal) {
      if (t.row() == t.col()) throw DomainError("RateMatrix: diagonal entry among off-diagonal rates");
      if (t.value() < 0) throw DomainError("RateMatrix: negative rate");
      if (t.value() == 0) continue;
      exit[static_cast<std::size_t>(t.row())] += t.value();
      all.push_back(t);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (exit[i] != 0) all.emplace_back(to_int(i), to_int(i), -exit[i]);
    q_.setFromTriplets(all.begin(), all.end());
    q_.makeCompressed();
  }

  std::size_t size() const { return static_cast<std::size_t>(q_.rows()); }
  const Sparse& matrix() const { return q_; }
  double rate(std::size_t a, std::size_t b) const { return q_.coeff(to_int(a), to_int(b)); }
  double exit_rate(std::size_t a) const { return -q_.coeff(to_int(a), to_int(a)); }

  /// max_a |sum_b q(a, b)|
  double max_row_sum() const {
    double worst = 0;
    for (int r = 0; r < q_.outerSize(); ++r) {
      double s = 0;
      for (Sparse::InnerIterator it(q_, r); it; ++it) s += it.value();
      worst = std::max(worst, std::abs(s));
    }
    return worst;
  }

 private:
  static int to_int(std::size_t n) { return static_cast<int>(n); }
  Sparse q_;
};

struct Generator {
  StateIndex index;
  RateMatrix q;
};

// --- enumeration -------------------------------------------------------------------

namespace detail {

inline void check_state_count(double count) {
  if (count > static_cast<double>(kMaxStates))
    throw StateSpaceOverflow("state space of " + std::to_string(count) + " states exceeds the bound of " +
                             std::to_string(kMaxStates));
}

inline double binomial(long n, long k) {
  if (k < 0 || k > n) return 0;
  return std::round(std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)));
}

}  // namespace detail

/// All occupation vectors on `sites` sites with total mass `total`.
inline std::vector<StateVec> enumerate_compositions(long sites, long total) {
  detail::check_state_count(detail::binomial(total + sites - 1, sites - 1));
  std::vector<StateVec> out;
  StateVec cur(static_cast<std::size_t>(sites), 0);
  std::function<void(std::size_t, long)> rec = [&](std::size_t pos, long left) {
    if (pos + 1 == cur.size()) {
      cur[pos] = left;
      out.push_back(cur);
      return;
    }
    for (long c = 0; c <= left; ++c) {
      cur[pos] = c;
      rec(pos + 1, left - c);
    }
  };
  if (sites == 0) return total == 0 ? std::vector<StateVec>{StateVec{}} : std::vector<StateVec>{};
  rec(0, total);
  return out;
}

/// All vectors of length `len` with entries in [lo, hi], lexicographic.
inline std::vector<StateVec> enumerate_box(std::size_t len, long lo, long hi) {
  detail::check_state_count(std::pow(static_cast<double>(hi - lo + 1), static_cast<double>(len)));
  std::vector<StateVec> out;
  StateVec cur(len, lo);
  for (;;) {
    out.push_back(cur);
    std::size_t pos = len;
    while (pos > 0) {
      --pos;
      if (cur[pos] < hi) {
        ++cur[pos];
        for (std::size_t j = pos + 1; j < len; ++j) cur[j] = lo;
        break;
      }
      if (pos == 0) return out;
    }
    if (len == 0) return out;
  }
}

// --- generator builders ------------------------------------------------------------

/// Closed SIP(m) ring with `sites` sites and `particles` particles (occupation states).
inline Generator build_sip_ring(long sites, long particles, double m) {
  require_positive_m(m);
  if (sites < 3) throw DomainError("build_sip_ring: need at least 3 sites");
  StateIndex idx(enumerate_compositions(sites, particles));
  std::vector<Eigen::Triplet<double>> trip;
  const double h = m / 2;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const StateVec& eta = idx.state(a);
    for (long i = 0; i < sites; ++i) {
      if (eta[static_cast<std::size_t>(i)] == 0) continue;
      for (int d : {+1, -1}) {
        const long j = (i + d + sites) % sites;
        StateVec to = eta;
        --to[static_cast<std::size_t>(i)];
        ++to[static_cast<std::size_t>(j)];
        const double rate = static_cast<double>(eta[static_cast<std::size_t>(i)]) *
                            (h + static_cast<double>(eta[static_cast<std::size_t>(j)]));
        trip.emplace_back(static_cast<int>(a), static_cast<int>(idx.index(to)), rate);
      }
    }
  }
  RateMatrix q(idx.size(), trip);
  return {std::move(idx), std::move(q)};
}

/// Labeled particles on a ring: inclusion (SIP) or independent walkers.
inline Generator build_labeled_ring(long sites, long particles, double m, bool inclusion) {
  require_positive_m(m);
  if (sites < 3) throw DomainError("build_labeled_ring: need at least 3 sites");
  StateIndex idx(enumerate_box(static_cast<std::size_t>(particles), 0, sites - 1));
  std::vector<Eigen::Triplet<double>> trip;
  const double h = m / 2;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const StateVec& y = idx.state(a);
    for (std::size_t i = 0; i < y.size(); ++i)
      for (int d : {+1, -1}) {
        const long target = (y[i] + d + sites) % sites;
        double rate = h;
        if (inclusion) rate += static_cast<double>(std::count(y.begin(), y.end(), target));
        StateVec to = y;
        to[i] = target;
        trip.emplace_back(static_cast<int>(a), static_cast<int>(idx.index(to)), rate);
      }
  }
  RateMatrix q(idx.size(), trip);
  return {std::move(idx), std::move(q)};
}

/// Coupled (Y, Ỹ) on a ring; a state is the concatenation (y_1..y_n, ỹ_1..ỹ_n).
inline Generator build_coupled_ring(long sites, long particles, double m) {
  require_positive_m(m);
  if (sites < 3) throw DomainError("build_coupled_ring: need at least 3 sites");
  const auto n = static_cast<std::size_t>(particles);
  StateIndex idx(enumerate_box(2 * n, 0, sites - 1));
  std::vector<Eigen::Triplet<double>> trip;
  const double h = m / 2;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const StateVec& s = idx.state(a);
    for (std::size_t i = 0; i < n; ++i)
      for (int d : {+1, -1}) {
        StateVec joint = s;
        joint[i] = (s[i] + d + sites) % sites;
        joint[n + i] = (s[n + i] + d + sites) % sites;
        trip.emplace_back(static_cast<int>(a), static_cast<int>(idx.index(joint)), h);
        const long target = (s[i] + d + sites) % sites;
        const auto count = std::count(s.begin(), s.begin() + static_cast<long>(n), target);
        if (count > 0) {
          StateVec solo = s;
          solo[i] = target;
          trip.emplace_back(static_cast<int>(a), static_cast<int>(idx.index(solo)), static_cast<double>(count));
        }
      }
  }
  RateMatrix q(idx.size(), trip);
  return {std::move(idx), std::move(q)};
}

/// Labeled absorbing dual on {0..N+1}: interior hops at m/2 + #{active
/// particles at the target}, absorption at gamma - alpha (left) and
/// beta - sigma (right). Absorbed particles are frozen.
inline Generator build_dual_absorbing(long n_sites, long particles, const ReservoirParams& res, double m) {
  require_positive_m(m);
  res.validate_markov_dual();
  if (n_sites < 1) throw DomainError("build_dual_absorbing: N must be >= 1");
  StateIndex idx(enumerate_box(static_cast<std::size_t>(particles), 0, n_sites + 1));
  std::vector<Eigen::Triplet<double>> trip;
  const double h = m / 2;
  auto active = [&](long x) { return x >= 1 && x <= n_sites; };
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const StateVec& y = idx.state(a);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!active(y[i])) continue;
      for (int d : {+1, -1}) {
        const long target = y[i] + d;
        double rate;
        if (!active(target)) {
          rate = d > 0 ? res.right_absorption_rate() : res.left_absorption_rate();
        } else {
          rate = h + static_cast<double>(std::count(y.begin(), y.end(), target));
        }
        StateVec to = y;
        to[i] = target;
        trip.emplace_back(static_cast<int>(a), static_cast<int>(idx.index(to)), rate);
      }
    }
  }
  RateMatrix q(idx.size(), trip);
  return {std::move(idx), std::move(q)};
}

/// Boundary-driven SIP(m) on {1..N} with every occupation capped at `cap`.
/// Transitions that would exceed the cap are suppressed (reflecting truncation).
inline Generator build_sip_segment_reservoirs(long n_sites, const ReservoirParams& res, double m, long cap) {
  require_positive_m(m);
  res.validate_nonnegative();
  if (n_sites < 1 || cap < 1) throw DomainError("build_sip_segment_reservoirs: need N >= 1 and cap >= 1");
  StateIndex idx(enumerate_box(static_cast<std::size_t>(n_sites), 0, cap));
  std::vector<Eigen::Triplet<double>> trip;
  const double h = m / 2;
  const auto last = static_cast<std::size_t>(n_sites - 1);
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const StateVec& eta = idx.state(a);
    auto add = [&](StateVec to, double rate) {
      if (rate > 0) trip.emplace_back(static_cast<int>(a), static_cast<int>(idx.index(to)), rate);
    };
    for (std::size_t i = 0; i + 1 < eta.size(); ++i)
      for (int d : {0, 1}) {
        const std::size_t from = d == 0 ? i : i + 1, to = d == 0 ? i + 1 : i;
        if (eta[from] == 0 || eta[to] >= cap) continue;
        StateVec next = eta;
        --next[from];
        ++next[to];
        add(next, static_cast<double>(eta[from]) * (h + static_cast<double>(eta[to])));
      }
    const double e1 = static_cast<double>(eta[0]), en = static_cast<double>(eta[last]);
    if (eta[0] < cap) {
      StateVec next = eta;
      ++next[0];
      add(next, res.alpha * (h + e1));
    }
    if (eta[0] > 0) {
      StateVec next = eta;
      --next[0];
      add(next, res.gamma * e1);
    }
    if (eta[last] < cap) {
      StateVec next = eta;
      ++next[last];
      add(next, res.sigma * (h + en));
    }
    if (eta[last] > 0) {
      StateVec next = eta;
      --next[last];
      add(next, res.beta * en);
    }
  }
  RateMatrix q(idx.size(), trip);
  return {std::move(idx), std::move(q)};
}

enum class Model { sip_ring, sip_segment_reservoirs, dual_absorbing, coupled, irw, labeled_sip_ring };

struct GeneratorParams {
  long sites = 3;      // ring size, or N for segments
  long particles = 1;  // ring particle count / labeled particle count
  double m = 2;
  ReservoirParams reservoirs{};
  long cap = 8;        // occupancy cap for sip_segment_reservoirs
};

inline Generator build_generator(Model model, const GeneratorParams& p) {
  switch (model) {
    case Model::sip_ring: return build_sip_ring(p.sites, p.particles, p.m);
    case Model::sip_segment_reservoirs: return build_sip_segment_reservoirs(p.sites, p.reservoirs, p.m, p.cap);
    case Model::dual_absorbing: return build_dual_absorbing(p.sites, p.particles, p.reservoirs, p.m);
    case Model::coupled: return build_coupled_ring(p.sites, p.particles, p.m);
    case Model::irw: return build_labeled_ring(p.sites, p.particles, p.m, false);
    case Model::labeled_sip_ring: return build_labeled_ring(p.sites, p.particles, p.m, true);
  }
  throw DomainError("build_generator: unknown model");
}

// --- generator-level duality ---------------------------------------------------------

namespace detail {

inline double dense_duality(const StateVec& xi, const StateVec& eta, double m) {
  double out = 1.0;
  for (std::size_t i = 0; i < xi.size() && out != 0.0; ++i)
    if (xi[i] != 0) out *= duality_poly(xi[i], eta[i], m);
  return out;
}

// sum over ordered neighbour pairs (i, j) of c_i (m/2 + c_j) [F(c - delta_i + delta_j) - F(c)]
template <class F>
double bulk_generator_action(const StateVec& c, double m, bool ring, F&& f) {
  const long n = static_cast<long>(c.size());
  const double base = f(c);
  double out = 0;
  for (long i = 0; i < n; ++i) {
    if (c[static_cast<std::size_t>(i)] == 0) continue;
    for (int d : {+1, -1}) {
      long j = i + d;
      if (ring)
        j = (j + n) % n;
      else if (j < 0 || j >= n)
        continue;
      StateVec next = c;
      --next[static_cast<std::size_t>(i)];
      ++next[static_cast<std::size_t>(j)];
      out += static_cast<double>(c[static_cast<std::size_t>(i)]) * (m / 2 + static_cast<double>(c[static_cast<std::size_t>(j)])) *
             (f(next) - base);
    }
  }
  return out;
}

}  // namespace detail

/// |(L acting on eta) D(xi, eta) - (L acting on xi) D(xi, eta)| on a ring
/// or on a closed segment (open-line range: no flux past the ends).
inline double intertwining_check(const OccupationConfig& xi, const OccupationConfig& eta, double m) {
  require_positive_m(m);
  if (!(xi.range() == eta.range())) throw DomainError("intertwining_check: incompatible ranges");
  if (xi.range().kind() == BoundaryKind::segment_with_reservoirs)
    throw DomainError("intertwining_check: use boundary_intertwining_check for reservoir segments");
  const bool ring = xi.range().kind() == BoundaryKind::ring;
  const StateVec x = xi.dense(), e = eta.dense();
  const double eta_side = detail::bulk_generator_action(e, m, ring, [&](const StateVec& s) { return detail::dense_duality(x, s, m); });
  const double xi_side = detail::bulk_generator_action(x, m, ring, [&](const StateVec& s) { return detail::dense_duality(s, e, m); });
  return std::abs(eta_side - xi_side);
}

struct ExhaustiveResidual {
  double max_residual = 0;
  std::size_t pairs = 0;
};

/// Max intertwining residual over all xi with |xi| <= max_dual and all eta
/// with eta_i <= max_occ on a ring of `sites` sites.
inline ExhaustiveResidual exhaustive_intertwining(long sites, long max_dual, long max_occ, double m) {
  const SiteRange ring = SiteRange::ring(sites);
  std::vector<StateVec> xis;
  for (long k = 0; k <= max_dual; ++k) {
    auto part = enumerate_compositions(sites, k);
    xis.insert(xis.end(), part.begin(), part.end());
  }
  const auto etas = enumerate_box(static_cast<std::size_t>(sites), 0, max_occ);
  ExhaustiveResidual out;
  for (const auto& x : xis) {
    const auto xi = OccupationConfig::from_dense(ring, x);
    for (const auto& e : etas) {
      out.max_residual = std::max(out.max_residual, intertwining_check(xi, OccupationConfig::from_dense(ring, e), m));
      ++out.pairs;
    }
  }
  return out;
}

namespace detail {

// xi: length N+2 over {0..N+1}; eta: length N over {1..N}
inline double dense_boundary_duality(const StateVec& xi, const StateVec& eta, double rho_l, double rho_r, double m) {
  const std::size_t n = eta.size();
  double out = std::pow(rho_l, static_cast<double>(xi[0])) * std::pow(rho_r, static_cast<double>(xi[n + 1]));
  for (std::size_t i = 0; i < n && out != 0.0; ++i)
    if (xi[i + 1] != 0) out *= duality_poly(xi[i + 1], eta[i], m);
  return out;
}

}  // namespace detail

/// |(L^SIP acting on eta) D^SIP - (L_dual acting on xi) D^SIP| for the
/// boundary-driven generator and its absorbing dual. The identity is
/// algebraic: any non-negative parameters with gamma != alpha and
/// beta != sigma are accepted.
inline double boundary_intertwining_check(const OccupationConfig& xi, const OccupationConfig& eta,
                                          const ReservoirParams& res, double m) {
  require_positive_m(m);
  res.validate_nonnegative();
  if (res.gamma == res.alpha || res.beta == res.sigma)
    throw DomainError("boundary_intertwining_check: need gamma != alpha and beta != sigma");
  if (xi.range().kind() != BoundaryKind::segment_with_reservoirs || !(xi.range() == eta.range()))
    throw DomainError("boundary_intertwining_check: incompatible ranges");
  const long lo = xi.range().lo();
  const std::size_t n = xi.range().size();
  StateVec x(n + 2, 0);
  for (const auto& [site, c] : xi.counts()) x[static_cast<std::size_t>(site - lo + 1)] = c;
  const StateVec e = eta.dense();
  const double rl = res.rho_left(), rr = res.rho_right(), h = m / 2;
  auto dfun = [&](const StateVec& xs, const StateVec& es) { return detail::dense_boundary_duality(xs, es, rl, rr, m); };
  const double base = dfun(x, e);

  // eta side: bulk + reservoirs
  double eta_side = detail::bulk_generator_action(e, m, false, [&](const StateVec& s) { return dfun(x, s); });
  auto eta_shift = [&](std::size_t site, long d) {
    StateVec s = e;
    s[site] += d;
    return dfun(x, s) - base;
  };
  const double e1 = static_cast<double>(e.front()), en = static_cast<double>(e.back());
  eta_side += res.alpha * (h + e1) * eta_shift(0, +1);
  if (e.front() > 0) eta_side += res.gamma * e1 * eta_shift(0, -1);
  eta_side += res.sigma * (h + en) * eta_shift(n - 1, +1);
  if (e.back() > 0) eta_side += res.beta * en * eta_shift(n - 1, -1);

  // xi side: bulk on the interior + absorption
  StateVec interior(x.begin() + 1, x.end() - 1);
  double xi_side = detail::bulk_generator_action(interior, m, false, [&](const StateVec& s) {
    StateVec full = x;
    std::copy(s.begin(), s.end(), full.begin() + 1);
    return dfun(full, e);
  });
  if (x[1] > 0) {
    StateVec s = x;
    --s[1];
    ++s[0];
    xi_side += (res.gamma - res.alpha) * static_cast<double>(x[1]) * (dfun(s, e) - base);
  }
  if (x[n] > 0) {
    StateVec s = x;
    --s[n];
    ++s[n + 1];
    xi_side += (res.beta - res.sigma) * static_cast<double>(x[n]) * (dfun(s, e) - base);
  }
  return std::abs(eta_side - xi_side);
}

/// Max boundary residual over xi on {0..N+1} with |xi| <= max_dual and eta on
/// {1..N} with eta_i <= max_occ.
inline ExhaustiveResidual exhaustive_boundary_intertwining(long n_sites, long max_dual, long max_occ,
                                                           const ReservoirParams& res, double m) {
  const SiteRange seg = SiteRange::segment(n_sites);
  std::vector<StateVec> xis;
  for (long k = 0; k <= max_dual; ++k) {
    auto part = enumerate_compositions(n_sites + 2, k);
    xis.insert(xis.end(), part.begin(), part.end());
  }
  const auto etas = enumerate_box(static_cast<std::size_t>(n_sites), 0, max_occ);
  ExhaustiveResidual out;
  for (const auto& x : xis) {
    OccupationConfig xi(seg);
    for (std::size_t i = 0; i < x.size(); ++i) xi.set(static_cast<long>(i), x[i]);
    for (const auto& e : etas) {
      out.max_residual =
          std::max(out.max_residual, boundary_intertwining_check(xi, OccupationConfig::from_dense(seg, e), res, m));
      ++out.pairs;
    }
  }
  return out;
}

// --- absorption ----------------------------------------------------------------------

/// Thomas algorithm for sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = rhs[i].
inline std::vector<double> solve_tridiagonal(const std::vector<double>& sub, const std::vector<double>& diag,
                                             const std::vector<double>& sup, std::vector<double> rhs) {
  const std::size_t n = diag.size();
  if (sub.size() != n || sup.size() != n || rhs.size() != n) throw DomainError("solve_tridiagonal: size mismatch");
  std::vector<double> c(n);
  c[0] = sup[0] / diag[0];
  rhs[0] /= diag[0];
  for (std::size_t i = 1; i < n; ++i) {
    const double f = 1 / (diag[i] - sub[i] * c[i - 1]);
    c[i] = sup[i] * f;
    rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) * f;
  }
  for (std::size_t i = n - 1; i > 0; --i) rhs[i - 1] -= c[i - 1] * rhs[i];
  return rhs;
}

/// P_i(single dual particle is absorbed at N+1), i = 0..N+1.
inline std::vector<double> absorption_solve_single(long n_sites, double m,
                                                   const ReservoirParams& res = ReservoirParams{}) {
  require_positive_m(m);
  if (n_sites < 1) throw DomainError("absorption_solve_single: N must be >= 1");
  ReservoirParams r = res;
  if (r.alpha == 0 && r.beta == 0 && r.gamma == 0 && r.sigma == 0) r = ReservoirParams::canonical(0, 0, m);
  r.validate_markov_dual();
  const auto n = static_cast<std::size_t>(n_sites);
  const double h = m / 2;
  std::vector<double> sub(n), diag(n), sup(n), rhs(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double left = k == 0 ? r.left_absorption_rate() : h;
    const double right = k + 1 == n ? r.right_absorption_rate() : h;
    diag[k] = left + right;
    sub[k] = k == 0 ? 0.0 : -left;
    sup[k] = k + 1 == n ? 0.0 : -right;
    if (k + 1 == n) rhs[k] = right;  // h_{N+1} = 1
  }
  const auto interior = solve_tridiagonal(sub, diag, sup, rhs);
  std::vector<double> out(n + 2, 0.0);
  out[n + 1] = 1.0;
  std::copy(interior.begin(), interior.end(), out.begin() + 1);
  return out;
}

struct DualAbsorption {
  long n_sites = 0;
  /// Absorption pattern (site per label, each 0 or N+1) -> probability.
  std::map<StateVec, double> patterns;
  /// by_right[l] = P(l particles absorbed at N+1, n - l at 0).
  std::vector<double> by_right;

  /// sum over patterns of prod_i rho(a_i), rho(0) = rho_L, rho(N+1) = rho_R.
  double correlation(double rho_left, double rho_right) const {
    double s = 0;
    for (const auto& [pat, p] : patterns) {
      double prod = 1;
      for (long a : pat) prod *= a == 0 ? rho_left : rho_right;
      s += p * prod;
    }
    return s;
  }
};

/// Exact absorption law of the labeled n-particle dual started at `start`.
inline DualAbsorption dual_absorption_solve(const LabeledPositions& start, long n_sites, double m,
                                            const ReservoirParams& res = ReservoirParams{}) {
  ReservoirParams r = res;
  if (r.alpha == 0 && r.beta == 0 && r.gamma == 0 && r.sigma == 0) r = ReservoirParams::canonical(0, 0, m);
  const auto n = start.size();
  for (long y : start.positions)
    if (y < 0 || y > n_sites + 1) throw RangeError("dual_absorption_solve: start outside {0..N+1}");
  DualAbsorption out;
  out.n_sites = n_sites;
  out.by_right.assign(n + 1, 0.0);
  auto absorbed = [&](const StateVec& s) {
    return std::all_of(s.begin(), s.end(), [&](long x) { return x == 0 || x == n_sites + 1; });
  };
  auto record = [&](const StateVec& pat, double p) {
    if (p == 0) return;
    out.patterns[pat] += p;
    out.by_right[static_cast<std::size_t>(std::count(pat.begin(), pat.end(), n_sites + 1))] += p;
  };
  if (absorbed(start.positions)) {
    record(start.positions, 1.0);
    return out;
  }

  const Generator g = build_dual_absorbing(n_sites, static_cast<long>(n), r, m);
  std::vector<std::size_t> transient, absorbing;
  std::vector<long> slot(g.index.size(), -1);
  for (std::size_t a = 0; a < g.index.size(); ++a) {
    if (absorbed(g.index.state(a))) {
      slot[a] = static_cast<long>(absorbing.size());
      absorbing.push_back(a);
    } else {
      slot[a] = static_cast<long>(transient.size());
      transient.push_back(a);
    }
  }
  // (-Q_TT) H = Q_TA, one column per absorbing pattern
  std::vector<Eigen::Triplet<double>> tt;
  Eigen::MatrixXd ta = Eigen::MatrixXd::Zero(static_cast<long>(transient.size()), static_cast<long>(absorbing.size()));
  const auto& q = g.q.matrix();
  for (std::size_t t = 0; t < transient.size(); ++t) {
    for (RateMatrix::Sparse::InnerIterator it(q, static_cast<int>(transient[t])); it; ++it) {
      const auto col = static_cast<std::size_t>(it.col());
      if (absorbed(g.index.state(col)))
        ta(static_cast<long>(t), slot[col]) += it.value();
      else
        tt.emplace_back(static_cast<int>(t), static_cast<int>(slot[col]), -it.value());
    }
  }
  Eigen::SparseMatrix<double> a(static_cast<long>(transient.size()), static_cast<long>(transient.size()));
  a.setFromTriplets(tt.begin(), tt.end());
  a.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) throw DomainError("dual_absorption_solve: factorisation failed");
  const long row = slot[g.index.index(start.positions)];
  for (std::size_t c = 0; c < absorbing.size(); ++c) {
    const Eigen::VectorXd col = ta.col(static_cast<long>(c));
    if (col.isZero(0)) continue;
    const Eigen::VectorXd h = lu.solve(col);
    record(g.index.state(absorbing[c]), h(row));
  }
  return out;
}

// --- stationary and transient solves --------------------------------------------------

inline bool is_irreducible(const RateMatrix& q) {
  const auto& m = q.matrix();
  const std::size_t n = q.size();
  if (n == 0) return false;
  std::vector<std::vector<std::size_t>> fwd(n), bwd(n);
  for (int r = 0; r < m.outerSize(); ++r)
    for (RateMatrix::Sparse::InnerIterator it(m, r); it; ++it)
      if (it.col() != r && it.value() > 0) {
        fwd[static_cast<std::size_t>(r)].push_back(static_cast<std::size_t>(it.col()));
        bwd[static_cast<std::size_t>(it.col())].push_back(static_cast<std::size_t>(r));
      }
  auto reach_all = [&](const std::vector<std::vector<std::size_t>>& adj) {
    std::vector<char> seen(n, 0);
    std::queue<std::size_t> todo;
    todo.push(0);
    seen[0] = 1;
    std::size_t count = 1;
    while (!todo.empty()) {
      const std::size_t a = todo.front();
      todo.pop();
      for (std::size_t b : adj[a])
        if (!seen[b]) {
          seen[b] = 1;
          ++count;
          todo.push(b);
        }
    }
    return count == n;
  };
  return reach_all(fwd) && reach_all(bwd);
}

/// pi Q = 0, sum pi = 1.
inline std::vector<double> stationary_solve(const RateMatrix& q) {
  if (!is_irreducible(q)) throw ReducibleError("stationary_solve: generator is not irreducible");
  const auto n = static_cast<long>(q.size());
  // Q^T pi = 0 with the last equation replaced by normalisation
  std::vector<Eigen::Triplet<double>> trip;
  const auto& m = q.matrix();
  for (int r = 0; r < m.outerSize(); ++r)
    for (RateMatrix::Sparse::InnerIterator it(m, r); it; ++it)
      if (it.col() != n - 1) trip.emplace_back(static_cast<int>(it.col()), r, it.value());
  for (long c = 0; c < n; ++c) trip.emplace_back(static_cast<int>(n - 1), static_cast<int>(c), 1.0);
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  a.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) throw DomainError("stationary_solve: factorisation failed");
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  const Eigen::VectorXd pi = lu.solve(b);
  return {pi.data(), pi.data() + n};
}

/// max_a |(pi Q)_a|
inline double stationary_residual(const RateMatrix& q, const std::vector<double>& pi) {
  Eigen::Map<const Eigen::VectorXd> p(pi.data(), static_cast<long>(pi.size()));
  const Eigen::VectorXd r = q.matrix().transpose() * p;
  return r.cwiseAbs().maxCoeff();
}

/// max over pairs |pi(a) q(a,b) - pi(b) q(b,a)|
inline double detailed_balance_residual(const RateMatrix& q, const std::vector<double>& pi) {
  double worst = 0;
  const auto& m = q.matrix();
  for (int r = 0; r < m.outerSize(); ++r)
    for (RateMatrix::Sparse::InnerIterator it(m, r); it; ++it) {
      if (it.col() == r) continue;
      const auto a = static_cast<std::size_t>(r), b = static_cast<std::size_t>(it.col());
      worst = std::max(worst, std::abs(pi[a] * it.value() - pi[b] * q.rate(b, a)));
    }
  return worst;
}

/// Conditioned product weights prod_i Gamma(m/2 + eta_i)/(eta_i! Gamma(m/2)), normalised.
inline std::vector<double> product_measure_weights(const StateIndex& idx, double m) {
  const double h = m / 2;
  std::vector<double> w(idx.size());
  double total = 0;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    double lw = 0;
    for (long c : idx.state(a)) lw += std::lgamma(h + static_cast<double>(c)) - std::lgamma(c + 1.0) - std::lgamma(h);
    w[a] = std::exp(lw);
    total += w[a];
  }
  for (double& x : w) x /= total;
  return w;
}

/// (E_a f(X_t))_a for every start state a, by uniformization:
/// sum_k Poisson(Lambda t; k) P^k f with P = I + Q/Lambda. The series is
/// cut once the neglected Poisson mass times max|f| is below `tol`.
inline std::vector<double> transient_expectations(const RateMatrix& q, const std::vector<double>& f, double t,
                                                  double tol = 1e-9) {
  if (f.size() != q.size()) throw DomainError("transient_expectations: size mismatch");
  if (t < 0) throw DomainError("transient_expectations: negative time");
  Eigen::Map<const Eigen::VectorXd> fv(f.data(), static_cast<long>(f.size()));
  double lambda = 0;
  for (std::size_t a = 0; a < q.size(); ++a) lambda = std::max(lambda, q.exit_rate(a));
  if (t == 0 || lambda == 0) return f;
  const double fmax = std::max(fv.cwiseAbs().maxCoeff(), 1e-300);
  const double mu = lambda * t;
  Eigen::VectorXd v = fv;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(v.size());
  double mass = 0;
  const long k_cap = static_cast<long>(mu + 50.0 * std::sqrt(mu + 1.0) + 1000.0);
  for (long k = 0; k <= k_cap; ++k) {
    const double w = std::exp(-mu + static_cast<double>(k) * std::log(mu) - std::lgamma(static_cast<double>(k) + 1));
    acc += w * v;
    mass += w;
    if (static_cast<double>(k) > mu && (1 - mass) * fmax < tol) return {acc.data(), acc.data() + acc.size()};
    v = v + (q.matrix() * v) / lambda;
  }
  throw ConvergenceError("transient_expectations: Poisson series did not converge");
}

inline double transient_expectation(const RateMatrix& q, const std::vector<double>& f, double t, std::size_t state,
                                    double tol = 1e-9) {
  return transient_expectations(q, f, t, tol).at(state);
}

struct TruncatedStationary {
  long cap = 0;
  /// E[eta_i]/(m/2) per site i = 1..N
  std::vector<double> density;
};

/// Boundary-driven stationary profile from the capped generator, doubling
/// the cap until the profile moves by less than `tol`.
inline TruncatedStationary boundary_stationary_truncated(long n_sites, const ReservoirParams& res, double m,
                                                         double tol = 1e-6, long initial_cap = 8) {
  TruncatedStationary prev;
  for (long cap = initial_cap;; cap *= 2) {
    if (std::pow(static_cast<double>(cap + 1), static_cast<double>(n_sites)) > static_cast<double>(kMaxStates)) {
      if (prev.cap == 0) throw StateSpaceOverflow("boundary_stationary_truncated: first cap already too large");
      throw ConvergenceError("boundary_stationary_truncated: cap doubling hit the state bound at cap " +
                             std::to_string(prev.cap));
    }
    const Generator g = build_sip_segment_reservoirs(n_sites, res, m, cap);
    const auto pi = stationary_solve(g.q);
    TruncatedStationary cur{cap, std::vector<double>(static_cast<std::size_t>(n_sites), 0.0)};
    for (std::size_t a = 0; a < pi.size(); ++a)
      for (std::size_t i = 0; i < cur.density.size(); ++i)
        cur.density[i] += pi[a] * static_cast<double>(g.index.state(a)[i]) / (m / 2);
    if (prev.cap != 0) {
      double move = 0;
      for (std::size_t i = 0; i < cur.density.size(); ++i) move = std::max(move, std::abs(cur.density[i] - prev.density[i]));
      if (move < tol) return cur;
    }
    prev = std::move(cur);
  }
}

}  // namespace sip
