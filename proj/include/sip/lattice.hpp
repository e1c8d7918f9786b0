#pragma once

// Site ranges, occupation configurations and labeled particle positions.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sip/error.hpp"

namespace sip {

enum class BoundaryKind { open_line_window, segment_with_reservoirs, ring };

inline const char* to_string(BoundaryKind kind) {
  switch (kind) {
    case BoundaryKind::open_line_window: return "open_line_window";
    case BoundaryKind::segment_with_reservoirs: return "segment_with_reservoirs";
    case BoundaryKind::ring: return "ring";
  }
  return "?";
}

/// Inclusive range of integer sites [lo, hi].
///
/// For `segment_with_reservoirs` the range holds the bulk sites {lo..hi};
/// the virtual reservoir sites lo-1 and hi+1 may carry absorbed-particle
/// counts (the dual picture) but are never part of the bulk.
class SiteRange {
 public:
  SiteRange(long lo, long hi, BoundaryKind kind = BoundaryKind::open_line_window)
      : lo_(lo), hi_(hi), kind_(kind) {
    if (lo > hi) throw DomainError("SiteRange: lo > hi");
    if (kind == BoundaryKind::ring && hi - lo + 1 < 3)
      throw DomainError("SiteRange: a ring needs at least 3 sites");
  }

  /// Segment {1..n_sites} with reservoirs at 0 and n_sites+1.
  static SiteRange segment(long n_sites) {
    return SiteRange(1, n_sites, BoundaryKind::segment_with_reservoirs);
  }
  static SiteRange ring(long n_sites) { return SiteRange(0, n_sites - 1, BoundaryKind::ring); }

  long lo() const { return lo_; }
  long hi() const { return hi_; }
  BoundaryKind kind() const { return kind_; }
  std::size_t size() const { return static_cast<std::size_t>(hi_ - lo_ + 1); }

  bool contains(long x) const { return x >= lo_ && x <= hi_; }

  /// Sites at which a count may be stored: the bulk plus, for segments,
  /// the two absorbing virtual sites.
  bool admits(long x) const {
    if (kind_ == BoundaryKind::segment_with_reservoirs) return x >= lo_ - 1 && x <= hi_ + 1;
    return contains(x);
  }
  bool is_virtual(long x) const {
    return kind_ == BoundaryKind::segment_with_reservoirs && (x == lo_ - 1 || x == hi_ + 1);
  }

  /// Nearest-neighbour site in direction `dir` (+1/-1), wrapping on a ring.
  long neighbor(long x, int dir) const {
    long y = x + dir;
    if (kind_ == BoundaryKind::ring) {
      if (y > hi_) y = lo_;
      if (y < lo_) y = hi_;
    }
    return y;
  }

  friend bool operator==(const SiteRange&, const SiteRange&) = default;

 private:
  long lo_;
  long hi_;
  BoundaryKind kind_;
};

/// Occupation numbers eta on a site range; only non-zero counts are stored.
class OccupationConfig {
 public:
  explicit OccupationConfig(SiteRange range) : range_(range) {}

  const SiteRange& range() const { return range_; }

  long at(long x) const {
    auto it = counts_.find(x);
    return it == counts_.end() ? 0 : it->second;
  }

  void set(long x, long count) {
    if (!range_.admits(x)) throw RangeError("site " + std::to_string(x) + " outside range");
    if (count < 0) throw DomainError("negative occupation");
    if (count == 0)
      counts_.erase(x);
    else
      counts_[x] = count;
  }

  void add(long x, long delta) { set(x, at(x) + delta); }

  /// Total mass, including any absorbed counts at virtual sites.
  long total() const {
    long s = 0;
    for (const auto& [x, c] : counts_) s += c;
    return s;
  }

  /// Sparse view: site -> non-zero count, ascending by site.
  const std::map<long, long>& counts() const { return counts_; }

  /// Dense counts on [lo, hi] (virtual sites excluded).
  std::vector<long> dense() const {
    std::vector<long> v(range_.size(), 0);
    for (const auto& [x, c] : counts_)
      if (range_.contains(x)) v[static_cast<std::size_t>(x - range_.lo())] = c;
    return v;
  }

  static OccupationConfig from_dense(SiteRange range, const std::vector<long>& counts) {
    if (counts.size() != range.size()) throw DomainError("from_dense: size mismatch");
    OccupationConfig out(range);
    for (std::size_t i = 0; i < counts.size(); ++i)
      out.set(range.lo() + static_cast<long>(i), counts[i]);
    return out;
  }

  OccupationConfig& operator+=(const OccupationConfig& other) {
    if (!(other.range_ == range_)) throw DomainError("OccupationConfig: incompatible ranges");
    for (const auto& [x, c] : other.counts_) add(x, c);
    return *this;
  }
  friend OccupationConfig operator+(OccupationConfig a, const OccupationConfig& b) {
    a += b;
    return a;
  }
  friend bool operator==(const OccupationConfig&, const OccupationConfig&) = default;

 private:
  SiteRange range_;
  std::map<long, long> counts_;
};

/// Ordered positions (y_1, ..., y_n); the label of a particle is its index.
struct LabeledPositions {
  std::vector<long> positions;

  LabeledPositions() = default;
  LabeledPositions(std::initializer_list<long> ys) : positions(ys) {}
  explicit LabeledPositions(std::vector<long> ys) : positions(std::move(ys)) {}

  std::size_t size() const { return positions.size(); }
  long operator[](std::size_t i) const { return positions[i]; }
  long& operator[](std::size_t i) { return positions[i]; }

  friend bool operator==(const LabeledPositions&, const LabeledPositions&) = default;
};

/// counts[x] = #{i : y_i = x}.
inline OccupationConfig occupation_of(const LabeledPositions& p, const SiteRange& r) {
  OccupationConfig out(r);
  for (long y : p.positions) {
    if (!r.admits(y)) throw RangeError("occupation_of: position " + std::to_string(y) + " outside range");
    out.add(y, 1);
  }
  return out;
}

inline OccupationConfig delta_config(long x, const SiteRange& r) {
  if (!r.admits(x)) throw RangeError("delta_config: site " + std::to_string(x) + " outside range");
  OccupationConfig out(r);
  out.set(x, 1);
  return out;
}

/// Micro site floor(N y) of a macroscopic point y.
inline long macro_site(double y, long n_scale) {
  return static_cast<long>(std::floor(static_cast<double>(n_scale) * y));
}

}  // namespace sip
