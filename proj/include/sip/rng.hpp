#pragma once

// Counter-based random streams (Philox4x32-10).
//
// A stream is a pure function of (key, stream index, draw counter), so
// replicas obtain independent streams by index without any coordination
// and every draw is reproducible.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <string>

namespace sip {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

}  // namespace detail

/// Seedable counter-based stream. Satisfies UniformRandomBitGenerator.
///
/// The 128-bit Philox counter is (draw counter, stream index); the key is
/// derived from the master seed. Distinct stream indices under one seed
/// therefore never share a counter value.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), key_(derive_key(seed)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (cursor_ >= 4) refill();
    const std::uint64_t hi = block_[cursor_++];
    const std::uint64_t lo = block_[cursor_++];
    return (hi << 32) | lo;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  /// Number of 128-bit blocks consumed so far.
  std::uint64_t counter() const { return counter_; }

 private:
  static std::array<std::uint32_t, 2> derive_key(std::uint64_t seed) {
    const std::uint64_t k = detail::splitmix64(seed);
    return {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  void refill() {
    block_ = detail::philox4x32_10(
        {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
        key_);
    ++counter_;
    cursor_ = 0;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::array<std::uint32_t, 2> key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int cursor_ = 4;
};

/// Sub-stream `index` of `master`. Sub-streams of one master are
/// collision-free; a master that is itself a sub-stream re-keys from
/// (seed, stream) so nested splits stay deterministic.
inline RngStream split_stream(const RngStream& master, std::uint64_t index) {
  if (master.stream() == 0) return RngStream(master.seed(), index);
  const std::uint64_t child_seed =
      detail::splitmix64(master.seed() ^ detail::splitmix64(master.stream() + 0x632BE59BD9B4E019ULL));
  return RngStream(child_seed, index);
}

/// Uniform double in the open interval (0, 1), 53 bits.
template <class Rng>
double uniform01(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Exponential holding time with the given rate (> 0).
template <class Rng>
double exponential(Rng& rng, double rate) {
  return -std::log(uniform01(rng)) / rate;
}

/// Default master seed: SIP_SEED environment variable if set, else `fallback`.
inline std::uint64_t default_seed(std::uint64_t fallback = 20240601) {
  if (const char* s = std::getenv("SIP_SEED"); s != nullptr && *s != '\0')
    return std::stoull(s);
  return fallback;
}

}  // namespace sip
