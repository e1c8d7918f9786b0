#pragma once

// Exact (Gillespie direct-method) simulation of SIP(m), independent
// walkers, the boundary-driven SIP and its absorbing dual.
//
// Every engine draws one exponential holding time per event and selects
// the event with a single uniform against cumulative rates, scanning
// channels in a fixed left-to-right order, so a fixed stream reproduces
// the event log bit for bit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sip/error.hpp"
#include "sip/lattice.hpp"
#include "sip/measures.hpp"
#include "sip/rng.hpp"

namespace sip {

enum class EventKind { rw_jump, inclusion_jump, reservoir_birth, reservoir_death, absorption };

inline const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::rw_jump: return "rw_jump";
    case EventKind::inclusion_jump: return "inclusion_jump";
    case EventKind::reservoir_birth: return "reservoir_birth";
    case EventKind::reservoir_death: return "reservoir_death";
    case EventKind::absorption: return "absorption";
  }
  return "?";
}

/// One transition. Reservoir events use the virtual site (lo-1 or hi+1)
/// as their `from` (birth) or `to` (death).
struct JumpEvent {
  double time = 0;
  EventKind kind = EventKind::rw_jump;
  long from = 0;
  long to = 0;
  std::optional<std::size_t> label;

  friend bool operator==(const JumpEvent&, const JumpEvent&) = default;
};

template <class State>
struct Trajectory {
  State initial;
  std::vector<JumpEvent> events;
  double horizon = 0;
};

/// Default per-replica event cap.
inline constexpr std::uint64_t kDefaultEventCap = 1'000'000'000ULL;

/// Observer that ignores everything.
struct NullObserver {
  template <class Sim>
  void advance(const Sim&, double) {}
  template <class Sim>
  void event(const JumpEvent&, const Sim&) {}
};

/// Observer that stores the event log.
struct EventRecorder {
  std::vector<JumpEvent> events;
  template <class Sim>
  void advance(const Sim&, double) {}
  template <class Sim>
  void event(const JumpEvent& ev, const Sim&) {
    events.push_back(ev);
  }
};

// --- rates -----------------------------------------------------------------

/// eta_i (m/2 + eta_j): rate at which one particle moves from i to neighbour j.
inline double sip_bulk_rate(const OccupationConfig& eta, long i, long j, double m) {
  require_positive_m(m);
  const SiteRange& r = eta.range();
  if (r.neighbor(i, +1) != j && r.neighbor(i, -1) != j) throw DomainError("sip_bulk_rate: sites are not neighbours");
  return static_cast<double>(eta.at(i)) * (m / 2 + static_cast<double>(eta.at(j)));
}

/// m/2 + #{k : y_k = y_i + e}: rate for labeled particle i to hop by e.
inline double labeled_sip_rate(const LabeledPositions& p, std::size_t i, int e, double m) {
  require_positive_m(m);
  if (i >= p.size()) throw RangeError("labeled_sip_rate: label out of range");
  if (e != 1 && e != -1) throw DomainError("labeled_sip_rate: direction must be +1 or -1");
  const long target = p[i] + e;
  const auto others = std::count(p.positions.begin(), p.positions.end(), target);
  return m / 2 + static_cast<double>(others);
}

// --- sum tree ----------------------------------------------------------------

/// Complete binary tree of non-negative leaf rates. Internal nodes are
/// recomputed from their children on every update, so the total never
/// accumulates drift.
class RateTree {
 public:
  explicit RateTree(std::size_t n) : n_(n) {
    while (leaves_ < std::max<std::size_t>(n, 1)) leaves_ <<= 1;
    tree_.assign(2 * leaves_, 0.0);
  }

  void set(std::size_t i, double rate) {
    std::size_t node = leaves_ + i;
    tree_[node] = rate;
    for (node >>= 1; node >= 1; node >>= 1) tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
  }
  double get(std::size_t i) const { return tree_[leaves_ + i]; }
  double total() const { return tree_[1]; }

  /// Leaf containing cumulative offset u in [0, total), and the offset
  /// remaining inside that leaf.
  std::pair<std::size_t, double> find(double u) const {
    std::size_t node = 1;
    while (node < leaves_) {
      if (u < tree_[2 * node]) {
        node = 2 * node;
      } else {
        u -= tree_[2 * node];
        node = 2 * node + 1;
      }
    }
    std::size_t leaf = node - leaves_;
    if (leaf >= n_ || tree_[node] <= 0) {
      // u landed past the last positive leaf through rounding
      leaf = std::min(leaf, n_ - 1);
      while (leaf > 0 && tree_[leaves_ + leaf] <= 0) --leaf;
      u = tree_[leaves_ + leaf];
    }
    return {leaf, std::min(u, tree_[leaves_ + leaf] * (1 - 1e-16))};
  }

 private:
  std::size_t n_;
  std::size_t leaves_ = 1;
  std::vector<double> tree_;
};

// --- occupation-field SIP ------------------------------------------------------

/// SIP(m) on the occupation field of a ring, an open-line window, or a
/// segment coupled to reservoirs.
///
/// On an open-line window a particle arriving at either edge site aborts
/// the run with WindowEdgeAbort. On a segment the reservoir generator adds
/// births alpha (m/2 + eta_lo), deaths gamma eta_lo at the left end and
/// births sigma (m/2 + eta_hi), deaths beta eta_hi at the right end.
class OccupationSimulator {
 public:
  OccupationSimulator(const OccupationConfig& initial, double m, ReservoirParams reservoirs = {})
      : range_(initial.range()), m_(m), half_(m / 2), res_(reservoirs), eta_(initial.dense()), rates_(range_.size()) {
    require_positive_m(m);
    if (range_.kind() == BoundaryKind::segment_with_reservoirs) {
      res_.validate_nonnegative();
      for (const auto& [x, c] : initial.counts())
        if (range_.is_virtual(x)) throw DomainError("OccupationSimulator: initial counts at reservoir sites");
    }
    if (range_.kind() == BoundaryKind::open_line_window && (eta_.front() > 0 || eta_.back() > 0))
      throw WindowEdgeAbort("OccupationSimulator: initial particle on the window edge");
    for (std::size_t i = 0; i < eta_.size(); ++i) rates_.set(i, site_rate(i));
  }

  const SiteRange& range() const { return range_; }
  double m() const { return m_; }
  double time() const { return time_; }
  std::uint64_t events() const { return n_events_; }
  long at(long x) const { return range_.contains(x) ? eta_[index(x)] : 0; }
  const std::vector<long>& dense() const { return eta_; }
  double total_rate() const { return rates_.total(); }
  OccupationConfig state() const { return OccupationConfig::from_dense(range_, eta_); }

  /// Advance to absolute time `horizon`.
  template <class Rng, class Observer = NullObserver>
  void run_until(double horizon, Rng& rng, Observer&& obs = {}) {
    while (time_ < horizon) {
      const double total = rates_.total();
      if (!(total > 0)) {
        obs.advance(*this, horizon - time_);
        time_ = horizon;
        return;
      }
      const double dt = exponential(rng, total);
      if (time_ + dt >= horizon) {
        obs.advance(*this, horizon - time_);
        time_ = horizon;
        return;
      }
      obs.advance(*this, dt);
      time_ += dt;
      const JumpEvent ev = fire(uniform01(rng) * total);
      obs.event(ev, *this);
    }
  }

 private:
  std::size_t index(long x) const { return static_cast<std::size_t>(x - range_.lo()); }

  // Neighbour index in direction dir, or -1 when absent.
  long neighbor_index(std::size_t i, int dir) const {
    const long n = static_cast<long>(eta_.size());
    long j = static_cast<long>(i) + dir;
    if (range_.kind() == BoundaryKind::ring) return (j + n) % n;
    return (j < 0 || j >= n) ? -1 : j;
  }

  struct Channels {
    // right rw, right inclusion, left rw, left inclusion,
    // left birth, left death, right birth, right death
    double r[8];
  };

  Channels channels(std::size_t i) const {
    Channels c{};
    const double e = static_cast<double>(eta_[i]);
    if (eta_[i] > 0) {
      if (long j = neighbor_index(i, +1); j >= 0) {
        c.r[0] = e * half_;
        c.r[1] = e * static_cast<double>(eta_[static_cast<std::size_t>(j)]);
      }
      if (long j = neighbor_index(i, -1); j >= 0) {
        c.r[2] = e * half_;
        c.r[3] = e * static_cast<double>(eta_[static_cast<std::size_t>(j)]);
      }
    }
    if (range_.kind() == BoundaryKind::segment_with_reservoirs) {
      if (i == 0) {
        c.r[4] = res_.alpha * (half_ + e);
        c.r[5] = res_.gamma * e;
      }
      if (i + 1 == eta_.size()) {
        c.r[6] = res_.sigma * (half_ + e);
        c.r[7] = res_.beta * e;
      }
    }
    return c;
  }

  double site_rate(std::size_t i) const {
    const Channels c = channels(i);
    double s = 0;
    for (double r : c.r) s += r;
    return s;
  }

  void refresh(long i) {
    const long n = static_cast<long>(eta_.size());
    if (range_.kind() == BoundaryKind::ring) i = (i % n + n) % n;
    if (i < 0 || i >= n) return;
    rates_.set(static_cast<std::size_t>(i), site_rate(static_cast<std::size_t>(i)));
  }

  JumpEvent fire(double u) {
    auto [leaf, rem] = rates_.find(u);
    const Channels c = channels(leaf);
    int k = 0;
    for (; k < 7; ++k) {
      if (rem < c.r[k]) break;
      rem -= c.r[k];
    }
    while (c.r[k] <= 0 && k > 0) --k;

    const long x = range_.lo() + static_cast<long>(leaf);
    JumpEvent ev;
    ev.label = std::nullopt;
    long touched_a = static_cast<long>(leaf), touched_b = static_cast<long>(leaf);
    if (k <= 3) {
      const int dir = k <= 1 ? +1 : -1;
      const long j = neighbor_index(leaf, dir);
      --eta_[leaf];
      ++eta_[static_cast<std::size_t>(j)];
      ev.kind = (k % 2 == 0) ? EventKind::rw_jump : EventKind::inclusion_jump;
      ev.from = x;
      ev.to = range_.lo() + j;
      touched_b = j;
    } else if (k == 4 || k == 6) {
      ++eta_[leaf];
      ev.kind = EventKind::reservoir_birth;
      ev.from = k == 4 ? range_.lo() - 1 : range_.hi() + 1;
      ev.to = x;
    } else {
      --eta_[leaf];
      ev.kind = EventKind::reservoir_death;
      ev.from = x;
      ev.to = k == 5 ? range_.lo() - 1 : range_.hi() + 1;
    }
    ev.time = time_;
    ++n_events_;
    // rates depend on a site and its two neighbours
    if (touched_a - touched_b > 1 || touched_b - touched_a > 1) {  // jump across the ring seam
      for (long d = -1; d <= 1; ++d) {
        refresh(touched_a + d);
        refresh(touched_b + d);
      }
    } else {
      const long first = std::min(touched_a, touched_b) - 1, last = std::max(touched_a, touched_b) + 1;
      for (long y = first; y <= last; ++y) refresh(y);
    }
    if (range_.kind() == BoundaryKind::open_line_window && (ev.to == range_.lo() || ev.to == range_.hi()))
      throw WindowEdgeAbort("particle reached the edge of the simulation window at site " + std::to_string(ev.to));
    return ev;
  }

  SiteRange range_;
  double m_;
  double half_;
  ReservoirParams res_;
  std::vector<long> eta_;
  RateTree rates_;
  double time_ = 0;
  std::uint64_t n_events_ = 0;
};

// --- labeled particles -----------------------------------------------------------

enum class Interaction { inclusion, independent };

/// Where labeled particles live.
///  - open_line: window [lo, hi]; arriving at lo or hi aborts the run.
///  - ring: sites [lo, hi] with wrap-around.
///  - absorbing: bulk [lo, hi]; lo-1 and hi+1 absorb at the given rates
///    per adjacent particle, absorbed particles are frozen and inert.
struct LabeledGeometry {
  enum class Kind { open_line, ring, absorbing } kind = Kind::open_line;
  long lo = 0;
  long hi = 0;
  double left_absorption = 0;
  double right_absorption = 0;

  static LabeledGeometry open_line(long lo, long hi) { return {Kind::open_line, lo, hi, 0, 0}; }
  static LabeledGeometry ring(long lo, long hi) {
    if (hi - lo + 1 < 3) throw DomainError("ring needs at least 3 sites");
    return {Kind::ring, lo, hi, 0, 0};
  }
  /// Bulk {1..n_sites}, absorbing 0 and n_sites+1.
  static LabeledGeometry absorbing(long n_sites, double left_rate, double right_rate) {
    if (n_sites < 1) throw DomainError("absorbing segment needs N >= 1");
    return {Kind::absorbing, 1, n_sites, left_rate, right_rate};
  }
  bool absorbed(long x) const { return kind == Kind::absorbing && (x < lo || x > hi); }
};

/// Window [min - margin, max + margin], margin = ceil(8 sqrt(m T)) + 64.
inline LabeledGeometry open_window_for(const LabeledPositions& start, double m, double horizon) {
  if (start.size() == 0) return LabeledGeometry::open_line(-1, 1);
  const auto [mn, mx] = std::minmax_element(start.positions.begin(), start.positions.end());
  const long margin = static_cast<long>(std::ceil(8.0 * std::sqrt(m * horizon))) + 64;
  return LabeledGeometry::open_line(*mn - margin, *mx + margin);
}

/// Labeled SIP(m) (or independent walkers): particle i hops by e at rate
/// m/2 + #{k : y_k = y_i + e}, the second term dropped for independent
/// walkers. Channels per label in order: right walk, right inclusion,
/// left walk, left inclusion.
class LabeledSimulator {
 public:
  LabeledSimulator(LabeledPositions initial, double m, LabeledGeometry geometry,
                   Interaction interaction = Interaction::inclusion)
      : m_(m), half_(m / 2), geo_(geometry), interact_(interaction), pos_(std::move(initial)) {
    require_positive_m(m);
    const long pad = geo_.kind == LabeledGeometry::Kind::absorbing ? 1 : 0;
    occ_.assign(static_cast<std::size_t>(geo_.hi - geo_.lo + 1 + 2 * pad), 0);
    occ_lo_ = geo_.lo - pad;
    for (long y : pos_.positions) {
      if (y < occ_lo_ || y > occ_lo_ + static_cast<long>(occ_.size()) - 1)
        throw RangeError("LabeledSimulator: initial position " + std::to_string(y) + " outside geometry");
      if (geo_.kind == LabeledGeometry::Kind::open_line && (y == geo_.lo || y == geo_.hi))
        throw WindowEdgeAbort("LabeledSimulator: initial particle on the window edge");
      if (!geo_.absorbed(y)) ++occ_[slot(y)];
    }
  }

  double time() const { return time_; }
  std::uint64_t events() const { return n_events_; }
  const LabeledPositions& positions() const { return pos_; }
  const LabeledGeometry& geometry() const { return geo_; }
  double m() const { return m_; }
  /// Number of active (non-absorbed) particles at x.
  long occupancy(long x) const {
    if (x < occ_lo_ || x >= occ_lo_ + static_cast<long>(occ_.size()) || geo_.absorbed(x)) return 0;
    return occ_[slot(x)];
  }
  bool all_absorbed() const {
    for (long y : pos_.positions)
      if (!geo_.absorbed(y)) return false;
    return true;
  }

  double total_rate() const {
    double s = 0;
    for (std::size_t i = 0; i < pos_.size(); ++i) {
      const auto c = channels(i);
      s += c[0] + c[1] + c[2] + c[3];
    }
    return s;
  }

  template <class Rng, class Observer = NullObserver>
  void run_until(double horizon, Rng& rng, Observer&& obs = {}) {
    while (time_ < horizon) {
      const double total = total_rate();
      if (!(total > 0)) {
        obs.advance(*this, horizon - time_);
        time_ = horizon;
        return;
      }
      const double dt = exponential(rng, total);
      if (time_ + dt >= horizon) {
        obs.advance(*this, horizon - time_);
        time_ = horizon;
        return;
      }
      obs.advance(*this, dt);
      time_ += dt;
      const JumpEvent ev = fire(uniform01(rng) * total);
      obs.event(ev, *this);
    }
  }

  /// Run until every particle is absorbed (absorbing geometry only).
  template <class Rng, class Observer = NullObserver>
  void run_until_absorbed(Rng& rng, Observer&& obs = {}, std::uint64_t event_cap = kDefaultEventCap) {
    if (geo_.kind != LabeledGeometry::Kind::absorbing) throw DomainError("run_until_absorbed needs an absorbing geometry");
    while (!all_absorbed()) {
      const double total = total_rate();
      if (!(total > 0)) throw DomainError("run_until_absorbed: zero absorption rate with active particles");
      if (n_events_ >= event_cap) throw EventCapAbort("dual run exceeded the event cap");
      const double dt = exponential(rng, total);
      obs.advance(*this, dt);
      time_ += dt;
      const JumpEvent ev = fire(uniform01(rng) * total);
      obs.event(ev, *this);
    }
  }

 private:
  std::size_t slot(long x) const { return static_cast<std::size_t>(x - occ_lo_); }

  long wrap(long x) const {
    if (geo_.kind != LabeledGeometry::Kind::ring) return x;
    const long n = geo_.hi - geo_.lo + 1;
    return geo_.lo + ((x - geo_.lo) % n + n) % n;
  }

  std::array<double, 4> channels(std::size_t i) const {
    std::array<double, 4> c{};
    const long y = pos_[i];
    if (geo_.absorbed(y)) return c;
    for (int d = 0; d < 2; ++d) {
      const int e = d == 0 ? +1 : -1;
      const long target = wrap(y + e);
      if (geo_.absorbed(target)) {
        c[2 * d] = e > 0 ? geo_.right_absorption : geo_.left_absorption;
      } else {
        c[2 * d] = half_;
        if (interact_ == Interaction::inclusion) c[2 * d + 1] = static_cast<double>(occ_[slot(target)]);
      }
    }
    return c;
  }

  JumpEvent fire(double u) {
    std::size_t label = 0;
    int k = 0;
    bool found = false;
    std::size_t last_label = 0;
    int last_k = 0;
    for (std::size_t i = 0; i < pos_.size() && !found; ++i) {
      const auto c = channels(i);
      for (int j = 0; j < 4; ++j) {
        if (c[j] <= 0) continue;
        last_label = i;
        last_k = j;
        if (u < c[j]) {
          label = i;
          k = j;
          found = true;
          break;
        }
        u -= c[j];
      }
    }
    if (!found) {
      label = last_label;
      k = last_k;
    }
    const int e = k < 2 ? +1 : -1;
    const long from = pos_[label];
    const long to = wrap(from + e);
    --occ_[slot(from)];
    pos_[label] = to;
    JumpEvent ev{time_, EventKind::rw_jump, from, to, label};
    if (geo_.absorbed(to)) {
      ev.kind = EventKind::absorption;
    } else {
      ++occ_[slot(to)];
      if (k % 2 == 1) ev.kind = EventKind::inclusion_jump;
    }
    ++n_events_;
    if (geo_.kind == LabeledGeometry::Kind::open_line && (to == geo_.lo || to == geo_.hi))
      throw WindowEdgeAbort("particle reached the edge of the simulation window at site " + std::to_string(to));
    return ev;
  }

  double m_;
  double half_;
  LabeledGeometry geo_;
  Interaction interact_;
  LabeledPositions pos_;
  std::vector<long> occ_;
  long occ_lo_ = 0;
  double time_ = 0;
  std::uint64_t n_events_ = 0;
};

// --- trajectory-level API ----------------------------------------------------------

/// Exact SIP(m) trajectory on [0, T] from an occupation field (ring or
/// open-line window; a segment range simulates with zero reservoirs).
template <class Rng>
Trajectory<OccupationConfig> simulate_sip(const OccupationConfig& initial, double m, double horizon, Rng& rng) {
  OccupationSimulator sim(initial, m);
  EventRecorder rec;
  sim.run_until(horizon, rng, rec);
  return {initial, std::move(rec.events), horizon};
}

/// Exact labeled SIP(m) trajectory on Z, simulated in the margin window.
template <class Rng>
Trajectory<LabeledPositions> simulate_sip(const LabeledPositions& initial, double m, double horizon, Rng& rng) {
  LabeledSimulator sim(initial, m, open_window_for(initial, m, horizon));
  EventRecorder rec;
  sim.run_until(horizon, rng, rec);
  return {initial, std::move(rec.events), horizon};
}

/// n independent walkers, each jumping at rate m/2 in each direction.
template <class Rng>
Trajectory<LabeledPositions> simulate_irw(const LabeledPositions& initial, double m, double horizon, Rng& rng) {
  LabeledSimulator sim(initial, m, open_window_for(initial, m, horizon), Interaction::independent);
  EventRecorder rec;
  sim.run_until(horizon, rng, rec);
  return {initial, std::move(rec.events), horizon};
}

/// Boundary-driven SIP(m) on the segment range of `initial`.
template <class Rng>
Trajectory<OccupationConfig> simulate_boundary_driven(const OccupationConfig& initial, const ReservoirParams& res,
                                                      double m, double horizon, Rng& rng) {
  if (initial.range().kind() != BoundaryKind::segment_with_reservoirs)
    throw DomainError("simulate_boundary_driven: initial configuration must live on a segment");
  OccupationSimulator sim(initial, m, res);
  EventRecorder rec;
  sim.run_until(horizon, rng, rec);
  return {initial, std::move(rec.events), horizon};
}

/// Absorbing dual on {0..N+1}: runs until every particle sits at 0 or N+1
/// and returns the absorption site of each label. Interior particles move
/// as labeled SIP; a particle at 1 (resp. N) is absorbed at rate
/// gamma - alpha (resp. beta - sigma).
template <class Rng>
std::vector<long> simulate_dual_absorbing(const LabeledPositions& initial, long n_sites, const ReservoirParams& res,
                                          double m, Rng& rng, std::uint64_t event_cap = kDefaultEventCap) {
  res.validate_markov_dual();
  LabeledSimulator sim(initial, m,
                       LabeledGeometry::absorbing(n_sites, res.left_absorption_rate(), res.right_absorption_rate()));
  sim.run_until_absorbed(rng, NullObserver{}, event_cap);
  return sim.positions().positions;
}

// --- replay and logs -------------------------------------------------------------

/// Re-applies events to the initial state; throws if a count would go negative
/// or times are not strictly increasing.
inline OccupationConfig replay(const Trajectory<OccupationConfig>& traj) {
  OccupationConfig s = traj.initial;
  double last = -1;
  for (const auto& ev : traj.events) {
    if (!(ev.time > last)) throw DomainError("replay: event times not strictly increasing");
    last = ev.time;
    const bool from_bulk = !s.range().is_virtual(ev.from);
    const bool to_bulk = !s.range().is_virtual(ev.to);
    if (from_bulk) {
      if (s.at(ev.from) <= 0) throw DomainError("replay: negative occupation");
      s.add(ev.from, -1);
    }
    if (to_bulk) s.add(ev.to, +1);
  }
  return s;
}

inline LabeledPositions replay(const Trajectory<LabeledPositions>& traj) {
  LabeledPositions p = traj.initial;
  double last = -1;
  for (const auto& ev : traj.events) {
    if (!(ev.time > last)) throw DomainError("replay: event times not strictly increasing");
    last = ev.time;
    if (!ev.label || *ev.label >= p.size() || p[*ev.label] != ev.from)
      throw DomainError("replay: event inconsistent with labeled state");
    p[*ev.label] = ev.to;
  }
  return p;
}

/// CSV event log: time,kind,from,to,label (label empty for field events).
inline void write_events_csv(std::ostream& out, const std::vector<JumpEvent>& events) {
  out << "time,kind,from,to,label\n";
  char buf[64];
  for (const auto& ev : events) {
    std::snprintf(buf, sizeof buf, "%.17g", ev.time);
    out << buf << ',' << to_string(ev.kind) << ',' << ev.from << ',' << ev.to << ',';
    if (ev.label) out << *ev.label;
    out << '\n';
  }
}

}  // namespace sip
