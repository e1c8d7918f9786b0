#include <gtest/gtest.h>

#include "sip/lattice.hpp"

using namespace sip;

TEST(SiteRange, SegmentAndRingFactories) {
  const auto seg = SiteRange::segment(4);
  EXPECT_EQ(seg.lo(), 1);
  EXPECT_EQ(seg.hi(), 4);
  EXPECT_EQ(seg.size(), 4u);
  EXPECT_TRUE(seg.admits(0));
  EXPECT_TRUE(seg.admits(5));
  EXPECT_FALSE(seg.contains(0));
  EXPECT_TRUE(seg.is_virtual(5));
  EXPECT_FALSE(seg.admits(6));

  const auto ring = SiteRange::ring(5);
  EXPECT_EQ(ring.neighbor(4, +1), 0);
  EXPECT_EQ(ring.neighbor(0, -1), 4);
  EXPECT_EQ(ring.neighbor(2, +1), 3);
  EXPECT_FALSE(ring.admits(5));
}

TEST(SiteRange, RejectsBadRanges) {
  EXPECT_THROW(SiteRange(3, 2), DomainError);
  EXPECT_THROW(SiteRange::ring(2), DomainError);
  EXPECT_NO_THROW(SiteRange::ring(3));
}

TEST(OccupationConfig, SparseStorageAndTotals) {
  OccupationConfig eta(SiteRange::segment(3));
  eta.set(2, 4);
  eta.add(3, 1);
  eta.set(0, 2);  // absorbed count at a reservoir site
  EXPECT_EQ(eta.at(2), 4);
  EXPECT_EQ(eta.at(1), 0);
  EXPECT_EQ(eta.total(), 7);
  EXPECT_EQ(eta.dense(), (std::vector<long>{0, 4, 1}));
  eta.set(2, 0);
  EXPECT_EQ(eta.counts().count(2), 0u);
}

TEST(OccupationConfig, Errors) {
  OccupationConfig eta(SiteRange::ring(4));
  EXPECT_THROW(eta.set(4, 1), RangeError);
  EXPECT_THROW(eta.set(1, -1), DomainError);
  EXPECT_THROW(eta.add(1, -1), DomainError);
  OccupationConfig other(SiteRange::ring(5));
  EXPECT_THROW(eta += other, DomainError);
  EXPECT_THROW(OccupationConfig::from_dense(SiteRange::ring(4), {1, 2}), DomainError);
}

TEST(OccupationConfig, AdditionAndDenseRoundTrip) {
  const auto r = SiteRange::ring(4);
  const auto a = OccupationConfig::from_dense(r, {1, 0, 2, 0});
  const auto b = OccupationConfig::from_dense(r, {0, 3, 1, 0});
  EXPECT_EQ((a + b).dense(), (std::vector<long>{1, 3, 3, 0}));
  EXPECT_EQ(OccupationConfig::from_dense(r, a.dense()), a);
}

TEST(LabeledPositions, OccupationOf) {
  const auto r = SiteRange(-3, 3);
  const LabeledPositions p{0, 0, 2, -1};
  const auto eta = occupation_of(p, r);
  EXPECT_EQ(eta.at(0), 2);
  EXPECT_EQ(eta.at(2), 1);
  EXPECT_EQ(eta.at(-1), 1);
  EXPECT_EQ(eta.total(), 4);
  EXPECT_THROW(occupation_of(LabeledPositions{7}, r), RangeError);
  EXPECT_EQ(occupation_of(LabeledPositions{}, r).total(), 0);
}

TEST(LabeledPositions, DeltaAndMacroSite) {
  EXPECT_EQ(delta_config(2, SiteRange::segment(3)).at(2), 1);
  EXPECT_THROW(delta_config(9, SiteRange::segment(3)), RangeError);
  EXPECT_EQ(macro_site(0.3, 10), 3);
  EXPECT_EQ(macro_site(-0.05, 100), -5);
  EXPECT_EQ(macro_site(-0.01, 50), -1);
}
