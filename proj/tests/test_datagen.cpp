#include <gtest/gtest.h>

#include <set>

#include "metastruct/datagen.hpp"
#include "metastruct/error.hpp"
#include "oracles.hpp"

using namespace metastruct;

namespace {

std::size_t differing(const LabelMask& a, const LabelMask& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace

TEST(Curvilinear, ForegroundFractionInRange) {
  const auto s = gen_curvilinear(64, 64, 3, 7);
  EXPECT_EQ(s.image.height(), 64);
  EXPECT_EQ(s.mask.width(), 64);
  EXPECT_GE(s.mask.foreground_fraction(), 0.05);
  EXPECT_LE(s.mask.foreground_fraction(), 0.6);
  for (double v : s.image.values()) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Curvilinear, Deterministic) {
  const auto a = gen_curvilinear(64, 64, 3, 7);
  const auto b = gen_curvilinear(64, 64, 3, 7);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.image, b.image);
}

TEST(Curvilinear, SeedsDiffer) {
  EXPECT_GE(differing(gen_curvilinear(64, 64, 3, 7).mask, gen_curvilinear(64, 64, 3, 8).mask), 1u);
}

TEST(Curvilinear, RejectsSmallImages) {
  EXPECT_THROW(gen_curvilinear(31, 64, 3, 1), InvalidArgument);
  EXPECT_THROW(gen_curvilinear(64, 16, 3, 1), InvalidArgument);
  EXPECT_THROW(gen_curvilinear(64, 64, 0, 1), InvalidArgument);
}

TEST(Curvilinear, ForegroundBrighterOnAverage) {
  const auto s = gen_curvilinear(64, 64, 3, 11);
  double fg = 0, bg = 0, nf = 0, nb = 0;
  for (std::size_t i = 0; i < s.mask.size(); ++i) {
    if (s.mask[i] == 1) { fg += s.image[i]; ++nf; } else { bg += s.image[i]; ++nb; }
  }
  EXPECT_GT(fg / nf, bg / nb + 0.2);
}

TEST(Blobs, DeterministicWithVisibleBlob) {
  const auto a = gen_blobs(64, 64, 5, 1);
  const auto b = gen_blobs(64, 64, 5, 1);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.image, b.image);
  EXPECT_GE(oracle::count_components(a.mask), 1);
  EXPECT_GE(a.mask.foreground_fraction(), 0.05);
  EXPECT_LE(a.mask.foreground_fraction(), 0.6);
}

TEST(Blobs, ZeroBlobsRejected) { EXPECT_THROW(gen_blobs(64, 64, 0, 1), InvalidArgument); }

TEST(Blobs, SeedsDiffer) {
  EXPECT_GT(differing(gen_blobs(64, 64, 5, 1).mask, gen_blobs(64, 64, 5, 2).mask), 0u);
}

TEST(CircleRectangle, DiskInsideRectangle) {
  const LabelMask m = gen_circle_rectangle(256);
  EXPECT_EQ(m(128, 128), 1);
  EXPECT_EQ(m(0, 0), 0);
  EXPECT_EQ(m(255, 255), 0);
  EXPECT_EQ(oracle::count_components(m, 1), 1);
  EXPECT_EQ(oracle::count_components(m, 0), 1);
}

TEST(CircleRectangle, ScalesDown) {
  const LabelMask m = gen_circle_rectangle(64);
  EXPECT_EQ(m.height(), 64);
  EXPECT_EQ(oracle::count_components(m, 1), 1);
  const double frac = m.foreground_fraction();
  EXPECT_NEAR(frac, gen_circle_rectangle(256).foreground_fraction(), 0.02);
  EXPECT_THROW(gen_circle_rectangle(32), InvalidArgument);
}

TEST(Multiclass, ThreeClassesEachAboveTwoPercent) {
  const auto s = gen_multiclass(64, 64, 3, 3);
  EXPECT_EQ(s.mask.n_classes(), 3);
  std::set<int> seen;
  for (std::size_t i = 0; i < s.mask.size(); ++i) seen.insert(s.mask[i]);
  EXPECT_EQ(seen, (std::set<int>{0, 1, 2}));
  for (int c = 0; c < 3; ++c) EXPECT_GE(s.mask.count(c), 0.02 * 64 * 64);
}

TEST(Multiclass, Deterministic) {
  EXPECT_EQ(gen_multiclass(64, 64, 4, 9).mask, gen_multiclass(64, 64, 4, 9).mask);
  EXPECT_THROW(gen_multiclass(64, 64, 2, 9), InvalidArgument);
}
