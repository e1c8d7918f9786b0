#pragma once

// Transition kernel of the continuous-time nearest-neighbour walk.

#include <cmath>
#include <cstddef>
#include <vector>

#include "sip/error.hpp"

namespace sip {

/// p_k = exp(-x) I_k(x), k >= 0, the probability that a walk jumping at
/// rate x/2 in each direction (per unit time) is displaced by +-k at time 1.
/// Equivalently, for a rate-m/2-per-direction walk at time t, x = m t.
class WalkKernel {
 public:
  explicit WalkKernel(double x) : x_(x) {
    if (!(x >= 0) || !std::isfinite(x)) throw DomainError("WalkKernel: argument must be finite and >= 0");
    if (x == 0) {
      p_ = {1.0};
      return;
    }
    // Miller backward recurrence I_{k-1} = (2k/x) I_k + I_{k+1}, normalised
    // with exp(x) = I_0 + 2 sum_{k>=1} I_k. The returned support reaches
    // 12 standard deviations (>= 40 sites), far past double precision.
    const auto k_max = static_cast<std::size_t>(std::ceil(40.0 + 12.0 * std::sqrt(x)));
    const std::size_t k_start = k_max + 40 + static_cast<std::size_t>(std::ceil(4.0 * std::sqrt(x)));
    std::vector<double> b(k_start + 2, 0.0);
    b[k_start] = 1e-280;
    for (std::size_t k = k_start; k >= 1; --k) {
      b[k - 1] = (2.0 * static_cast<double>(k) / x) * b[k] + b[k + 1];
      if (b[k - 1] > 1e250)
        for (std::size_t j = k - 1; j <= k_start; ++j) b[j] *= 1e-250;
    }
    double norm = b[0];
    for (std::size_t k = 1; k <= k_start; ++k) norm += 2.0 * b[k];
    p_.resize(k_max + 1);
    for (std::size_t k = 0; k <= k_max; ++k) p_[k] = b[k] / norm;
    for (std::size_t k = k_max + 1; k <= k_start; ++k) tail_ += 2.0 * b[k] / norm;
    while (p_.size() > 1 && p_.back() < 1e-300) p_.pop_back();
  }

  double argument() const { return x_; }
  double operator()(long k) const {
    const auto a = static_cast<std::size_t>(k < 0 ? -k : k);
    return a < p_.size() ? p_[a] : 0.0;
  }
  /// Largest |k| with a stored (non-negligible) weight.
  long reach() const { return static_cast<long>(p_.size()) - 1; }
  /// Mass the stored support omits (both sides).
  double tail() const { return tail_; }

 private:
  double x_;
  std::vector<double> p_;
  double tail_ = 0.0;
};

}  // namespace sip
