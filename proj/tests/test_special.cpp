#include <gtest/gtest.h>

#include <cmath>

#include "sip/special.hpp"

using namespace sip;

TEST(WalkKernel, MatchesBesselOracle) {
  for (double x : {0.1, 1.0, 2.0, 10.0, 55.5, 400.0}) {
    const WalkKernel k(x);
    for (long j = 0; j <= std::min<long>(60, k.reach()); ++j) {
      const double oracle = std::exp(-x) * std::cyl_bessel_i(static_cast<double>(j), x);
      EXPECT_NEAR(k(j), oracle, 1e-13 + 1e-10 * oracle) << "x=" << x << " j=" << j;
      EXPECT_EQ(k(j), k(-j));
    }
  }
}

TEST(WalkKernel, KnownValueAndNormalisation) {
  EXPECT_NEAR(WalkKernel(2.0)(0), 0.308508322553671, 1e-12);
  for (double x : {0.5, 30.0, 2000.0}) {
    const WalkKernel k(x);
    double s = k(0);
    for (long j = 1; j <= k.reach(); ++j) s += 2 * k(j);
    EXPECT_NEAR(s + k.tail(), 1.0, 1e-12);
    EXPECT_LT(k.tail(), 1e-10);
  }
}

TEST(WalkKernel, ZeroArgumentAndErrors) {
  const WalkKernel k(0.0);
  EXPECT_EQ(k(0), 1.0);
  EXPECT_EQ(k(1), 0.0);
  EXPECT_THROW(WalkKernel(-1.0), DomainError);
  EXPECT_THROW(WalkKernel(NAN), DomainError);
}
