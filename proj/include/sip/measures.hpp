#pragma once

// Duality polynomials, duality functions and the negative-binomial
// (discrete Gamma) product measures of SIP(m).

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sip/error.hpp"
#include "sip/lattice.hpp"
#include "sip/rng.hpp"

namespace sip {

inline void require_positive_m(double m) {
  if (!(m > 0) || !std::isfinite(m)) throw DomainError("m must be a positive real");
}

/// Upper bound on admissible scale parameters; lambda -> 1 makes the
/// normaliser (1 - lambda)^{-m/2} diverge.
inline constexpr double kLambdaMax = 1.0 - 1e-9;

inline void require_scale(double lambda) {
  if (!(lambda >= 0) || lambda > kLambdaMax)
    throw DomainError("scale parameter lambda must lie in [0, 1 - 1e-9], got " + std::to_string(lambda));
}

/// Reservoir coefficients of the boundary-driven generator: births at rate
/// alpha (m/2 + eta_1) and deaths gamma eta_1 on the left, births sigma
/// (m/2 + eta_N) and deaths beta eta_N on the right.
struct ReservoirParams {
  double alpha = 0, beta = 0, gamma = 0, sigma = 0;

  /// Choice for which one dual particle is a rate-m/2 walk absorbed at 0, N+1.
  static ReservoirParams canonical(double rho_left, double rho_right, double m) {
    require_positive_m(m);
    if (!(rho_left >= 0) || !(rho_right >= 0)) throw DomainError("reservoir densities must be >= 0");
    return {rho_left * m / 2, (rho_right + 1) * m / 2, (rho_left + 1) * m / 2, rho_right * m / 2};
  }

  void validate_nonnegative() const {
    if (alpha < 0 || beta < 0 || gamma < 0 || sigma < 0)
      throw DomainError("reservoir parameters must be non-negative");
  }
  /// gamma > alpha and beta > sigma: the dual absorption rates are positive.
  void validate_markov_dual() const {
    validate_nonnegative();
    if (!(gamma > alpha) || !(beta > sigma)) throw DomainError("reservoirs need gamma > alpha and beta > sigma");
  }
  double rho_left() const { return alpha / (gamma - alpha); }
  double rho_right() const { return sigma / (beta - sigma); }
  double left_absorption_rate() const { return gamma - alpha; }
  double right_absorption_rate() const { return beta - sigma; }
};

/// log d(k, n) for k <= n.
inline double log_duality_poly(long k, long n, double m) {
  const double h = m / 2;
  return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(n - k) + 1) +
         std::lgamma(h) - std::lgamma(h + static_cast<double>(k));
}

/// d(k, n) = n!/(n-k)! * Gamma(m/2)/Gamma(m/2 + k) for k <= n, else 0.
inline double duality_poly(long k, long n, double m) {
  require_positive_m(m);
  if (k < 0 || n < 0) throw DomainError("duality_poly: negative argument");
  if (k > n) return 0.0;
  if (k == 0) return 1.0;
  if (k > 64) return std::exp(log_duality_poly(k, n, m));
  // direct product keeps small cases within a few ulps
  const double h = m / 2;
  double out = 1.0;
  for (long j = 0; j < k; ++j) out *= static_cast<double>(n - j) / (h + static_cast<double>(j));
  return out;
}

/// D(xi, eta) = prod_i d(xi_i, eta_i) over a common site range.
inline double duality_fn(const OccupationConfig& xi, const OccupationConfig& eta, double m) {
  if (!(xi.range() == eta.range())) throw DomainError("duality_fn: incompatible ranges");
  double out = 1.0;
  for (const auto& [x, k] : xi.counts()) {
    out *= duality_poly(k, eta.at(x), m);
    if (out == 0.0) break;
  }
  return out;
}

/// rho_L^{xi_0} * prod_{i=1}^N d(xi_i, eta_i) * rho_R^{xi_{N+1}}.
///
/// xi lives on the segment range including the virtual sites lo-1, hi+1;
/// eta lives on the bulk of the same range.
inline double boundary_duality_fn(const OccupationConfig& xi, const OccupationConfig& eta,
                                  const ReservoirParams& res, double m) {
  if (xi.range().kind() != BoundaryKind::segment_with_reservoirs || !(xi.range() == eta.range()))
    throw DomainError("boundary_duality_fn: incompatible ranges");
  const long left = xi.range().lo() - 1, right = xi.range().hi() + 1;
  if (eta.at(left) != 0 || eta.at(right) != 0)
    throw DomainError("boundary_duality_fn: eta carries counts at reservoir sites");
  double out = 1.0;
  for (const auto& [x, k] : xi.counts()) {
    if (x == left)
      out *= std::pow(res.rho_left(), static_cast<double>(k));
    else if (x == right)
      out *= std::pow(res.rho_right(), static_cast<double>(k));
    else
      out *= duality_poly(k, eta.at(x), m);
  }
  return out;
}

/// nu_lambda(n) = (1-lambda)^{m/2} lambda^n / n! * Gamma(m/2+n)/Gamma(m/2).
inline double negbin_pmf(double lambda, double m, long n) {
  require_positive_m(m);
  if (!(lambda >= 0) || !(lambda < 1)) throw DomainError("negbin_pmf: lambda must lie in [0, 1)");
  if (n < 0) return 0.0;
  if (lambda == 0) return n == 0 ? 1.0 : 0.0;
  const double h = m / 2;
  const double nd = static_cast<double>(n);
  return std::exp(h * std::log1p(-lambda) + nd * std::log(lambda) - std::lgamma(nd + 1) +
                  std::lgamma(h + nd) - std::lgamma(h));
}

/// Exact inverse-CDF draw from nu_lambda using one uniform.
template <class Rng>
long negbin_sample(double lambda, double m, Rng& rng) {
  require_positive_m(m);
  if (!(lambda >= 0) || !(lambda < 1)) throw DomainError("negbin_sample: lambda must lie in [0, 1)");
  if (lambda == 0) return 0;
  const double h = m / 2;
  const double u = uniform01(rng);
  double p = std::exp(h * std::log1p(-lambda));
  double cdf = p;
  long n = 0;
  // p(n+1)/p(n) = lambda (m/2 + n)/(n + 1)
  while (u > cdf) {
    p *= lambda * (h + static_cast<double>(n)) / static_cast<double>(n + 1);
    ++n;
    cdf += p;
    if (p < 1e-300 && static_cast<double>(n) > h) break;  // rounding left u above the summed cdf
  }
  return n;
}

/// rho = (m/2) lambda/(1 - lambda).
inline double density_of_lambda(double lambda, double m) {
  require_positive_m(m);
  if (!(lambda >= 0) || !(lambda < 1)) throw DomainError("density_of_lambda: lambda must lie in [0, 1)");
  return m / 2 * lambda / (1 - lambda);
}

/// lambda = rho/(rho + m/2).
inline double lambda_of_density(double rho, double m) {
  require_positive_m(m);
  if (!(rho >= 0)) throw DomainError("lambda_of_density: rho must be >= 0");
  return rho / (rho + m / 2);
}

/// lambda/(1 - lambda): the first duality moment under nu_lambda.
inline double scale_ratio(double lambda) { return lambda / (1 - lambda); }

struct SeriesResult {
  double value;
  long terms;
  double tail_bound;
};

/// sum_{n >= 0} d(k, n) nu_lambda(n), truncated adaptively once the
/// geometric bound on the remaining tail drops below `tol`.
inline constexpr long kSeriesTermCap = 100000;

inline SeriesResult moment_series(long k, double lambda, double m, double tol = 1e-12) {
  require_positive_m(m);
  if (k < 0) throw DomainError("moment_series: k must be >= 0");
  if (!(lambda >= 0) || !(lambda < 1)) throw DomainError("moment_series: lambda must lie in [0, 1)");
  if (lambda == 0) return {k == 0 ? 1.0 : 0.0, 1, 0.0};
  const double h = m / 2;
  // t_n = d(k,n) nu(n) for n >= k; t_{n+1}/t_n = lambda (h + n)/(n + 1 - k).
  // t_k = (1 - lambda)^{m/2} lambda^k
  double term = std::exp(h * std::log1p(-lambda) + static_cast<double>(k) * std::log(lambda));
  double sum = 0.0;
  for (long n = k; n - k < kSeriesTermCap; ++n) {
    sum += term;
    const double ratio_next = lambda * (h + static_cast<double>(n)) / static_cast<double>(n + 1 - k);
    // ratios are monotone in n and tend to lambda
    const double ratio_sup = std::max(ratio_next, lambda);
    term *= ratio_next;
    if (ratio_sup < 1) {
      const double bound = term / (1 - ratio_sup);
      if (bound < tol) return {sum, n - k + 1, bound};
    }
  }
  throw ConvergenceError("moment_series: no convergence within the term cap");
}

inline double moment_identity_lhs(long k, double lambda, double m, double tol = 1e-12) {
  return moment_series(k, lambda, m, tol).value;
}

/// Relative defect of nu(n) nu(k) n (m/2 + k) = nu(n-1) nu(k+1) (k+1) (m/2 + n - 1).
inline double detailed_balance_defect(double lambda, double m, long n, long k) {
  const double h = m / 2;
  const double lhs = negbin_pmf(lambda, m, n) * negbin_pmf(lambda, m, k) * static_cast<double>(n) *
                     (h + static_cast<double>(k));
  const double rhs = negbin_pmf(lambda, m, n - 1) * negbin_pmf(lambda, m, k + 1) * static_cast<double>(k + 1) *
                     (h + static_cast<double>(n - 1));
  const double scale = std::max(std::abs(lhs), std::abs(rhs));
  return scale == 0 ? 0.0 : std::abs(lhs - rhs) / scale;
}

/// Real-valued field on the sites of Z: explicit values on [lo, lo+size)
/// and constant extensions `left` / `right` beyond.
struct LatticeField {
  long lo = 0;
  std::vector<double> values;
  double left = 0.0;
  double right = 0.0;

  long hi() const { return lo + static_cast<long>(values.size()) - 1; }
  double at(long x) const {
    if (x < lo) return left;
    if (x > hi()) return right;
    return values[static_cast<std::size_t>(x - lo)];
  }
};

/// Per-site scale parameters lambda(i) in [0, 1 - 1e-9]; edge values extend
/// constantly beyond the stored window.
class ScaleProfile {
 public:
  ScaleProfile(long lo, std::vector<double> lambda) : field_{lo, std::move(lambda), 0, 0} {
    if (field_.values.empty()) throw DomainError("ScaleProfile: empty");
    for (double l : field_.values) require_scale(l);
    field_.left = field_.values.front();
    field_.right = field_.values.back();
  }
  static ScaleProfile constant(double lambda, long lo = 0, long hi = 0) {
    return ScaleProfile(lo, std::vector<double>(static_cast<std::size_t>(hi - lo + 1), lambda));
  }

  double operator()(long x) const { return field_.at(x); }
  long lo() const { return field_.lo; }
  long hi() const { return field_.hi(); }
  const LatticeField& field() const { return field_; }

  /// The field lambda/(1 - lambda), with matching constant extensions.
  LatticeField ratio_field() const {
    LatticeField out{field_.lo, {}, scale_ratio(field_.left), scale_ratio(field_.right)};
    out.values.reserve(field_.values.size());
    for (double l : field_.values) out.values.push_back(scale_ratio(l));
    return out;
  }

 private:
  LatticeField field_;
};

/// prod_i lambda(x_i)/(1 - lambda(x_i)), the product-measure moment of D(sum delta_{x_i}, .).
inline double product_moment(const LabeledPositions& xs, const ScaleProfile& profile) {
  double out = 1.0;
  for (long x : xs.positions) out *= scale_ratio(profile(x));
  return out;
}

/// Draw eta from the product measure nu_lambda on the sites of `range`.
template <class Rng>
OccupationConfig sample_product_measure(const ScaleProfile& profile, const SiteRange& range, double m, Rng& rng) {
  OccupationConfig eta(range);
  for (long x = range.lo(); x <= range.hi(); ++x) eta.set(x, negbin_sample(profile(x), m, rng));
  return eta;
}

}  // namespace sip
