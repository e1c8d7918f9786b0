#pragma once

// Basic coupling of n SIP(m) particles Y with n independent walkers Ỹ:
// random-walk jumps are shared label by label, inclusion jumps move Y only.
// Diagnostics are integrated exactly between events.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "sip/dynamics.hpp"
#include "sip/error.hpp"
#include "sip/lattice.hpp"
#include "sip/rng.hpp"
#include "sip/stats.hpp"

namespace sip {

struct CoupledState {
  LabeledPositions sip;  // Y
  LabeledPositions irw;  // Ỹ

  CoupledState() = default;
  CoupledState(LabeledPositions y, LabeledPositions y_tilde) : sip(std::move(y)), irw(std::move(y_tilde)) {
    if (sip.size() != irw.size()) throw DomainError("CoupledState: particle counts differ");
  }
  /// Both sides started at the same positions.
  static CoupledState together(const LabeledPositions& start) { return {start, start}; }

  std::size_t size() const { return sip.size(); }
  long discrepancy(std::size_t i) const { return sip[i] - irw[i]; }
};

struct CoupledChannel {
  std::size_t label;
  int dir;
  bool joint;  // true: Y_i and Ỹ_i move together; false: Y_i alone
  double rate;
};

/// Event table in selection order: per label, joint right (m/2), joint
/// left (m/2), SIP-only right (#{k : Y_k = Y_i + 1}), SIP-only left.
inline std::vector<CoupledChannel> coupled_rates(const CoupledState& s, double m) {
  require_positive_m(m);
  std::vector<CoupledChannel> out;
  out.reserve(4 * s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double right = 0, left = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (s.sip[k] == s.sip[i] + 1) right += 1;
      if (s.sip[k] == s.sip[i] - 1) left += 1;
    }
    out.push_back({i, +1, true, m / 2});
    out.push_back({i, -1, true, m / 2});
    out.push_back({i, +1, false, right});
    out.push_back({i, -1, false, left});
  }
  return out;
}

/// Accumulated functionals of one coupled path on [0, t].
struct CouplingDiagnostics {
  std::size_t n = 0;
  double elapsed = 0;
  /// |Y_i(t) - Ỹ_i(t)|^2 per label.
  std::vector<double> sq_discrepancy;
  /// Time with some pair at distance 1 (the set Delta).
  double occupation_delta = 0;
  /// Time in Delta that is not a binary collision.
  double occupation_nonbinary = 0;
  /// A_{i,k}(t) = int I(|z_ik| = 1) z_ik ds with z_ik = Y_k - Y_i; row-major n x n.
  std::vector<double> additive;
  /// <M_i, M_i>_t = sum_k int I(|z_ik| = 1) ds.
  std::vector<double> quadratic_variation;
  /// M_i(t) = phi_i(t) - phi_i(0) - sum_k A_{i,k}(t), phi_i = Y_i - Ỹ_i.
  std::vector<double> martingale;

  explicit CouplingDiagnostics(std::size_t particles = 0)
      : n(particles),
        sq_discrepancy(particles, 0.0),
        additive(particles * particles, 0.0),
        quadratic_variation(particles, 0.0),
        martingale(particles, 0.0) {}

  double additive_at(std::size_t i, std::size_t k) const { return additive[i * n + k]; }

  /// Summation merge (for pooling sums across replicas).
  CouplingDiagnostics& operator+=(const CouplingDiagnostics& o) {
    if (o.n != n) throw DomainError("CouplingDiagnostics: particle counts differ");
    elapsed += o.elapsed;
    occupation_delta += o.occupation_delta;
    occupation_nonbinary += o.occupation_nonbinary;
    for (std::size_t i = 0; i < n; ++i) {
      sq_discrepancy[i] += o.sq_discrepancy[i];
      quadratic_variation[i] += o.quadratic_variation[i];
      martingale[i] += o.martingale[i];
    }
    for (std::size_t j = 0; j < additive.size(); ++j) additive[j] += o.additive[j];
    return *this;
  }
};

/// Collision indicators of a labeled configuration.
struct CollisionState {
  bool in_delta = false;
  bool binary = false;
};

inline CollisionState collision_state(const LabeledPositions& y) {
  CollisionState out;
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = i + 1; k < n; ++k) {
      if (std::labs(y[i] - y[k]) != 1) continue;
      out.in_delta = true;
      bool isolated = true;
      for (std::size_t l = 0; l < n && isolated; ++l) {
        if (l == i || l == k) continue;
        if (std::labs(y[l] - y[i]) < 2 || std::labs(y[l] - y[k]) < 2) isolated = false;
      }
      if (isolated) out.binary = true;
    }
  return out;
}

/// Exact simulation of the coupling on an open-line window.
class CoupledSimulator {
 public:
  CoupledSimulator(CoupledState start, double m, LabeledGeometry window)
      : m_(m), half_(m / 2), window_(window), state_(std::move(start)), initial_(state_), diag_(state_.size()) {
    require_positive_m(m);
    if (window_.kind != LabeledGeometry::Kind::open_line) throw DomainError("CoupledSimulator: open-line window expected");
    for (std::size_t i = 0; i < state_.size(); ++i) {
      check_inside(state_.sip[i]);
      check_inside(state_.irw[i]);
    }
    refresh_indicators();
  }

  const CoupledState& state() const { return state_; }
  double time() const { return time_; }
  std::uint64_t events() const { return n_events_; }

  template <class Rng, class Observer = NullObserver>
  void run_until(double horizon, Rng& rng, Observer&& obs = {}) {
    while (time_ < horizon) {
      const double total = total_rate();
      const double dt = total > 0 ? exponential(rng, total) : horizon - time_;
      if (time_ + dt >= horizon) {
        integrate(horizon - time_);
        obs.advance(*this, horizon - time_);
        time_ = horizon;
        break;
      }
      integrate(dt);
      obs.advance(*this, dt);
      time_ += dt;
      const JumpEvent ev = fire(uniform01(rng) * total);
      obs.event(ev, *this);
    }
  }

  /// Diagnostics at the current time.
  CouplingDiagnostics diagnostics() const {
    CouplingDiagnostics d = diag_;
    d.elapsed = time_;
    for (std::size_t i = 0; i < d.n; ++i) {
      const double phi = static_cast<double>(state_.discrepancy(i));
      d.sq_discrepancy[i] = phi * phi;
      double drift = 0;
      for (std::size_t k = 0; k < d.n; ++k) drift += d.additive[i * d.n + k];
      d.martingale[i] = phi - static_cast<double>(initial_.discrepancy(i)) - drift;
    }
    return d;
  }

 private:
  void check_inside(long x) const {
    if (x <= window_.lo || x >= window_.hi)
      throw WindowEdgeAbort("coupled particle reached the edge of the simulation window at site " + std::to_string(x));
  }

  double total_rate() const {
    // n joint pairs at total rate m each, plus one unit per ordered adjacent SIP pair
    return static_cast<double>(state_.size()) * m_ + static_cast<double>(adjacent_ordered_);
  }

  void refresh_indicators() {
    const std::size_t n = state_.size();
    adjacent_ordered_ = 0;
    signed_adjacent_.assign(n * n, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const long z = state_.sip[k] - state_.sip[i];
        if (z == 1 || z == -1) {
          signed_adjacent_[i * n + k] = static_cast<int>(z);
          ++adjacent_ordered_;
        }
      }
    collisions_ = collision_state(state_.sip);
  }

  void integrate(double dt) {
    if (dt <= 0) return;
    const std::size_t n = state_.size();
    if (collisions_.in_delta) {
      diag_.occupation_delta += dt;
      if (!collisions_.binary) diag_.occupation_nonbinary += dt;
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) {
        const int z = signed_adjacent_[i * n + k];
        if (z != 0) {
          diag_.additive[i * n + k] += z * dt;
          diag_.quadratic_variation[i] += dt;
        }
      }
  }

  JumpEvent fire(double u) {
    const std::size_t n = state_.size();
    std::size_t label = 0;
    int dir = +1;
    bool joint = true;
    bool found = false;
    for (std::size_t i = 0; i < n && !found; ++i) {
      long right = 0, left = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (state_.sip[k] == state_.sip[i] + 1) ++right;
        if (state_.sip[k] == state_.sip[i] - 1) ++left;
      }
      const double rates[4] = {half_, half_, static_cast<double>(right), static_cast<double>(left)};
      for (int c = 0; c < 4; ++c) {
        if (rates[c] <= 0) continue;
        label = i;
        dir = (c % 2 == 0) ? +1 : -1;
        joint = c < 2;
        if (u < rates[c]) {
          found = true;
          break;
        }
        u -= rates[c];
      }
    }
    const long from = state_.sip[label];
    state_.sip[label] += dir;
    if (joint) state_.irw[label] += dir;
    ++n_events_;
    check_inside(state_.sip[label]);
    check_inside(state_.irw[label]);
    refresh_indicators();
    return {time_, joint ? EventKind::rw_jump : EventKind::inclusion_jump, from, state_.sip[label], label};
  }

  double m_;
  double half_;
  LabeledGeometry window_;
  CoupledState state_;
  CoupledState initial_;
  CouplingDiagnostics diag_;
  std::vector<int> signed_adjacent_;
  long adjacent_ordered_ = 0;
  CollisionState collisions_;
  double time_ = 0;
  std::uint64_t n_events_ = 0;
};

struct CouplingResult {
  CoupledState state;
  CouplingDiagnostics diagnostics;
};

/// Coupled run from Y(0) = Ỹ(0) = start over [0, T] in the margin window.
template <class Rng>
CouplingResult simulate_coupling(const LabeledPositions& start, double m, double horizon, Rng& rng) {
  CoupledSimulator sim(CoupledState::together(start), m, open_window_for(start, m, horizon));
  sim.run_until(horizon, rng);
  return {sim.state(), sim.diagnostics()};
}

struct CollisionReport {
  double frac_delta;
  double frac_nonbinary;
};

inline CollisionReport collision_time_report(const CouplingDiagnostics& diag, double horizon) {
  if (!(horizon > 0)) throw DomainError("collision_time_report: horizon must be positive");
  return {diag.occupation_delta / horizon, diag.occupation_nonbinary / horizon};
}

// --- z-chain ---------------------------------------------------------------------

/// Difference chain: rate m to each neighbour everywhere, plus an extra
/// rate `origin_pull` from +-1 to 0. Projecting the two-particle coupling
/// gives origin_pull = 2 (both particles can invite); the displayed
/// difference generator carries 1.
class ZChainSimulator {
 public:
  ZChainSimulator(long z0, double m, double origin_pull = 2.0) : m_(m), pull_(origin_pull), z_(z0) {
    require_positive_m(m);
    if (!(origin_pull >= 0)) throw DomainError("z-chain: origin_pull must be >= 0");
  }

  long z() const { return z_; }
  double time() const { return time_; }
  /// int_0^t I(|z| = 1) ds
  double occupation_pm1() const { return occupation_; }
  /// A(t) = int_0^t I(|z| = 1) z ds
  double additive() const { return additive_; }

  template <class Rng, class Observer = NullObserver>
  void run_until(double horizon, Rng& rng, Observer&& obs = {}) {
    while (time_ < horizon) {
      const bool edge = z_ == 1 || z_ == -1;
      const double total = 2 * m_ + (edge ? pull_ : 0.0);
      const double dt = exponential(rng, total);
      const double step = std::min(dt, horizon - time_);
      if (edge) {
        occupation_ += step;
        additive_ += static_cast<double>(z_) * step;
      }
      obs.advance(*this, step);
      if (time_ + dt >= horizon) {
        time_ = horizon;
        break;
      }
      time_ += dt;
      double u = uniform01(rng) * total;
      const long from = z_;
      EventKind kind = EventKind::rw_jump;
      if (u < m_) {
        ++z_;
      } else if (u < 2 * m_ || !edge) {
        --z_;
      } else {
        z_ = 0;
        kind = EventKind::inclusion_jump;
      }
      obs.event(JumpEvent{time_, kind, from, z_, std::nullopt}, *this);
    }
  }

 private:
  double m_;
  double pull_;
  long z_;
  double time_ = 0;
  double occupation_ = 0;
  double additive_ = 0;
};

template <class Rng>
Trajectory<long> simulate_z_chain(long z0, double m, double horizon, Rng& rng, double origin_pull = 2.0) {
  ZChainSimulator sim(z0, m, origin_pull);
  EventRecorder rec;
  sim.run_until(horizon, rng, rec);
  return {z0, std::move(rec.events), horizon};
}

struct ZChainFunctionals {
  double occupation_pm1 = 0;
  double additive = 0;
  long final_z = 0;
};

template <class Rng>
ZChainFunctionals z_chain_functionals(long z0, double m, double horizon, Rng& rng, double origin_pull = 2.0) {
  ZChainSimulator sim(z0, m, origin_pull);
  sim.run_until(horizon, rng);
  return {sim.occupation_pm1(), sim.additive(), sim.z()};
}

/// Estimate of E_{z0}[A(T)^2]/T over independent replicas.
inline EstimateWithError estimate_additive_functional(double m, double horizon, std::size_t replicas,
                                                      const RngStream& master, unsigned threads = 1,
                                                      double origin_pull = 2.0, long z0 = 0) {
  if (replicas < 2) throw DomainError("estimate_additive_functional: need at least 2 replicas");
  return estimate_replicas(
      replicas, master, threads,
      [&](std::size_t, RngStream& rng) {
        const auto f = z_chain_functionals(z0, m, horizon, rng, origin_pull);
        return f.additive * f.additive / horizon;
      },
      "A(T)^2/T");
}

// --- absorbing coupling ------------------------------------------------------------

/// Coupling of n dual SIP particles and n independent walkers on {0..N+1}
/// with absorption at 0 and N+1 (canonical rates: each absorption happens
/// at the walk rate m/2). Walk jumps are shared while both partners are
/// active; once one partner is absorbed the other jumps alone. Inclusion
/// jumps move active SIP particles only.
class CoupledAbsorbingSimulator {
 public:
  CoupledAbsorbingSimulator(const LabeledPositions& start, long n_sites, double m)
      : n_sites_(n_sites), half_(m / 2), state_(CoupledState::together(start)) {
    require_positive_m(m);
    if (n_sites < 1) throw DomainError("CoupledAbsorbingSimulator: N must be >= 1");
    for (long y : start.positions)
      if (y < 0 || y > n_sites + 1) throw RangeError("CoupledAbsorbingSimulator: start outside {0..N+1}");
  }

  const CoupledState& state() const { return state_; }

  template <class Rng>
  void run_until_absorbed(Rng& rng, std::uint64_t event_cap = kDefaultEventCap) {
    const std::size_t n = state_.size();
    std::vector<double> rates(4 * n);
    for (;;) {
      double total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const bool y_on = active(state_.sip[i]);
        const bool w_on = active(state_.irw[i]);
        const double walk = (y_on || w_on) ? half_ : 0.0;
        double right = 0, left = 0;
        if (y_on)
          for (std::size_t k = 0; k < n; ++k) {
            if (k == i || !active(state_.sip[k])) continue;
            if (state_.sip[k] == state_.sip[i] + 1) right += 1;
            if (state_.sip[k] == state_.sip[i] - 1) left += 1;
          }
        rates[4 * i + 0] = walk;
        rates[4 * i + 1] = walk;
        rates[4 * i + 2] = right;
        rates[4 * i + 3] = left;
        total += 2 * walk + right + left;
      }
      if (total <= 0) return;
      if (events_++ >= event_cap) throw EventCapAbort("absorbing coupling exceeded the event cap");
      // absorption sites depend on the embedded jump chain only
      double u = uniform01(rng) * total;
      std::size_t c = 0;
      for (; c + 1 < rates.size(); ++c) {
        if (rates[c] > 0 && u < rates[c]) break;
        u -= rates[c];
      }
      while (rates[c] <= 0 && c > 0) --c;
      const std::size_t i = c / 4;
      const int dir = (c % 2 == 0) ? +1 : -1;
      if (c % 4 < 2) {
        if (active(state_.sip[i])) state_.sip[i] += dir;
        if (active(state_.irw[i])) state_.irw[i] += dir;
      } else {
        state_.sip[i] += dir;
      }
    }
  }

 private:
  bool active(long x) const { return x >= 1 && x <= n_sites_; }

  long n_sites_;
  double half_;
  CoupledState state_;
  std::uint64_t events_ = 0;
};

}  // namespace sip
