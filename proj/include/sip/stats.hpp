#pragma once

// Estimates with standard errors, batch means, and replica scheduling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <string>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "sip/error.hpp"
#include "sip/rng.hpp"

namespace sip {

/// Running mean/variance of i.i.d. samples (Welford, Chan merge).
class EstimateWithError {
 public:
  EstimateWithError() = default;
  explicit EstimateWithError(std::string observable) : name_(std::move(observable)) {}

  void add(double x) {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
  }

  template <class Range>
  static EstimateWithError from_samples(const Range& xs, std::string observable = {}) {
    EstimateWithError e(std::move(observable));
    for (double x : xs) e.add(x);
    return e;
  }

  const std::string& observable() const { return name_; }
  std::size_t count() const { return count_; }
  double mean() const { return mean_; }
  double variance() const { return count_ > 1 ? m2_ / static_cast<double>(count_ - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
  /// Sample standard deviation over sqrt(count).
  double standard_error() const {
    return count_ > 1 ? std::sqrt(variance() / static_cast<double>(count_)) : 0.0;
  }
  double se() const { return standard_error(); }

  /// |mean - target| <= k standard errors.
  bool within(double target, double k = 3.0) const { return std::abs(mean_ - target) <= k * se(); }

  /// Pooled estimate. An empty side is the identity; otherwise observables must match.
  friend EstimateWithError merge_estimates(const EstimateWithError& a, const EstimateWithError& b) {
    if (a.count_ == 0) return b.name_.empty() && !a.name_.empty() ? rename(b, a.name_) : b;
    if (b.count_ == 0) return a.name_.empty() && !b.name_.empty() ? rename(a, b.name_) : a;
    if (!a.name_.empty() && !b.name_.empty() && a.name_ != b.name_)
      throw DomainError("merge_estimates: observables differ ('" + a.name_ + "' vs '" + b.name_ + "')");
    EstimateWithError out(a.name_.empty() ? b.name_ : a.name_);
    const double na = static_cast<double>(a.count_), nb = static_cast<double>(b.count_);
    const double n = na + nb;
    const double delta = b.mean_ - a.mean_;
    out.count_ = a.count_ + b.count_;
    out.mean_ = a.mean_ + delta * nb / n;
    out.m2_ = a.m2_ + b.m2_ + delta * delta * na * nb / n;
    return out;
  }

 private:
  static EstimateWithError rename(EstimateWithError e, const std::string& name) {
    e.name_ = name;
    return e;
  }

  std::string name_;
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Time-weighted batch means over a fixed averaging window split into
/// equal batches. Feed piecewise-constant observables with `advance`.
class BatchMeans {
 public:
  BatchMeans(double window, std::size_t batches, std::size_t observables)
      : batch_len_(window / static_cast<double>(batches)),
        batches_(batches),
        integrals_(batches * observables, 0.0),
        n_obs_(observables) {
    if (!(window > 0) || batches < 2) throw DomainError("BatchMeans: need window > 0 and >= 2 batches");
  }

  /// Integrate `values` (one per observable) over a holding time `dt`.
  template <class Values>
  void advance(const Values& values, double dt) {
    while (dt > 0 && current_ < batches_) {
      const double room = batch_len_ - filled_;
      const double step = std::min(dt, room);
      for (std::size_t k = 0; k < n_obs_; ++k) integrals_[current_ * n_obs_ + k] += values[k] * step;
      filled_ += step;
      dt -= step;
      if (filled_ >= batch_len_ * (1 - 1e-15)) {
        ++current_;
        filled_ = 0;
      }
    }
  }

  bool complete() const { return current_ >= batches_; }

  EstimateWithError estimate(std::size_t observable, std::string name = {}) const {
    EstimateWithError e(std::move(name));
    for (std::size_t b = 0; b < batches_; ++b) e.add(integrals_[b * n_obs_ + observable] / batch_len_);
    return e;
  }

 private:
  double batch_len_;
  std::size_t batches_;
  std::vector<double> integrals_;
  std::size_t n_obs_;
  std::size_t current_ = 0;
  double filled_ = 0;
};

/// Run `count` replicas, replica i receiving split_stream(master, i).
///
/// Results come back indexed by replica, so any in-order reduction over
/// them is independent of the thread count. If replicas throw, the
/// exception of the lowest-indexed failing replica is rethrown.
template <class Fn>
auto run_replicas(std::size_t count, const RngStream& master, unsigned threads, Fn&& fn)
    -> std::vector<std::invoke_result_t<Fn&, std::size_t, RngStream&>> {
  using Result = std::invoke_result_t<Fn&, std::size_t, RngStream&>;
  std::vector<Result> results(count);
  std::vector<std::exception_ptr> errors(count);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(count, 1)));

  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        RngStream rng = split_stream(master, i);
        results[i] = fn(i, rng);
      } catch (...) {
        errors[i] = std::current_exception();
        return;
      }
    }
  };

  if (threads <= 1) {
    work(0, count);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (count + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(count, t * chunk);
      const std::size_t end = std::min(count, begin + chunk);
      pool.emplace_back(work, begin, end);
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

/// Mean/SE of a scalar observable over replicas, reduced in replica order.
template <class Fn>
EstimateWithError estimate_replicas(std::size_t count, const RngStream& master, unsigned threads, Fn&& fn,
                                    std::string name = {}) {
  const auto samples = run_replicas(count, master, threads, std::forward<Fn>(fn));
  return EstimateWithError::from_samples(samples, std::move(name));
}

}  // namespace sip
