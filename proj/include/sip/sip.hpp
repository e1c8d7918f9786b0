#pragma once

// Umbrella header for the SIP(m) library.

#include "sip/coupling.hpp"
#include "sip/dynamics.hpp"
#include "sip/error.hpp"
#include "sip/exact.hpp"
#include "sip/hydro.hpp"
#include "sip/lattice.hpp"
#include "sip/measures.hpp"
#include "sip/nes.hpp"
#include "sip/rng.hpp"
#include "sip/special.hpp"
#include "sip/stats.hpp"
