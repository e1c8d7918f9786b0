#pragma once

#include <stdexcept>
#include <string>

namespace sip {

// Position or site index outside the admissible site range.
struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Parameter outside the domain of a formula (m <= 0, lambda >= 1, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Runtime aborts of a single replica. Both map to CLI exit code 2.
struct SimulationAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A particle reached the edge of an open-line window.
struct WindowEdgeAbort : SimulationAbort {
  using SimulationAbort::SimulationAbort;
};

// The per-replica event cap was exceeded.
struct EventCapAbort : SimulationAbort {
  using SimulationAbort::SimulationAbort;
};

// Enumerated state space exceeds the configured bound.
struct StateSpaceOverflow : std::length_error {
  using std::length_error::length_error;
};

// Adaptive truncation did not reach its tolerance before the term cap.
struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// stationary_solve was handed a generator that is not irreducible.
struct ReducibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sip
