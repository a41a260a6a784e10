#include <gtest/gtest.h>

#include <numeric>

#include "metastruct/datagen.hpp"
#include "metastruct/error.hpp"
#include "metastruct/label_synthesis.hpp"
#include "metastruct/metastructure.hpp"
#include "oracles.hpp"

using namespace metastruct;

namespace {

double sum(const Grid<double>& g) {
  return std::accumulate(g.values().begin(), g.values().end(), 0.0);
}

const NoiseTransitionMatrix kRcl({{0.7, 0.3}, {0.3, 0.7}});

}  // namespace

TEST(Kde, FullWindowInterior) {
  LabelMask m(16, 16, 2, 1);
  const DensityMap d = kde_density(m, 1, 1);
  EXPECT_DOUBLE_EQ(d.point_count, 256.0);
  EXPECT_NEAR(d.values(8, 8), 1.0 / 256.0, 1e-15);
}

TEST(Kde, EmptyClassIsZero) {
  LabelMask m(16, 16, 2, 0);
  const DensityMap d = kde_density(m, 1, 2);
  for (double v : d.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(Kde, SinglePoint) {
  LabelMask m(15, 15, 2);
  m(7, 7) = 1;
  const DensityMap d = kde_density(m, 1, 2);
  for (int y = 0; y < 15; ++y) {
    for (int x = 0; x < 15; ++x) {
      const bool near = std::abs(y - 7) <= 2 && std::abs(x - 7) <= 2;
      EXPECT_NEAR(d.values(y, x), near ? 1.0 / 25.0 : 0.0, 1e-15);
    }
  }
}

TEST(Kde, MatchesDirectCount) {
  const LabelMask m = gen_blobs(48, 40, 4, 5).mask;
  for (int h : {1, 3, 6}) {
    for (bool wrap : {false, true}) {
      const DensityMap d =
          kde_density(m, 1, h, wrap ? WindowBoundary::kWrap : WindowBoundary::kZero);
      const Grid<double> ref = oracle::brute_kde(m, 1, h, wrap);
      for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(d.values[i], ref[i], 1e-14);
    }
  }
}

TEST(Kde, TorusIsExactlyNormalised) {
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const LabelMask m = gen_curvilinear(64, 64, 3, s).mask;
    for (int h : {1, 4, 8}) {
      EXPECT_NEAR(sum(kde_density(m, 1, h, WindowBoundary::kWrap).values), 1.0, 1e-9);
      EXPECT_NEAR(sum(kde_density(m, 0, h, WindowBoundary::kWrap).values), 1.0, 1e-9);
    }
  }
  // Zero padding loses mass at the border.
  const LabelMask m = gen_circle_rectangle(64);
  EXPECT_LT(sum(kde_density(m, 0, 4).values), 1.0);
}

TEST(ExpectedDensity, IdentityEqualsKde) {
  const LabelMask cl = gen_blobs(64, 64, 5, 2).mask;
  const DensityMap e = expected_density(NoiseTransitionMatrix::identity(2), cl, 1, 3);
  const DensityMap k = kde_density(cl, 1, 3);
  for (std::size_t i = 0; i < cl.size(); ++i) ASSERT_NEAR(e.values[i], k.values[i], 1e-15);
}

TEST(ExpectedDensity, RankOneIsFlatInside) {
  const LabelMask cl = gen_circle_rectangle(64);
  const int h = 2;
  const DensityMap e = expected_density(NoiseTransitionMatrix::uniform(2), cl, 1, h);
  const double ref = e.values(h, h);
  for (int y = h; y < 64 - h; ++y)
    for (int x = h; x < 64 - h; ++x) ASSERT_NEAR(e.values(y, x), ref, 1e-15);
}

TEST(ExpectedDensity, FullRankSeparatesCircle) {
  const LabelMask cl = gen_circle_rectangle(256);
  const DensityMap e = expected_density(kRcl, cl, 1, 8);
  EXPECT_GT(e.values(128, 128), e.values(20, 20));
}

TEST(NtmRank, Cases) {
  EXPECT_EQ(ntm_rank(NoiseTransitionMatrix::identity(2)), 2);
  EXPECT_EQ(ntm_rank(NoiseTransitionMatrix({{0.5, 0.5}, {0.5, 0.5}})), 1);
  EXPECT_EQ(ntm_rank(NoiseTransitionMatrix({{0.55, 0.45}, {0.45, 0.55}})), 2);
  EXPECT_EQ(ntm_rank(NoiseTransitionMatrix({{0.8, 0.1, 0.1}, {0.8, 0.1, 0.1}, {0.1, 0.1, 0.8}})), 2);
  EXPECT_EQ(ntm_rank(NoiseTransitionMatrix::uniform(4)), 1);
}

TEST(NtmRank, SymmetricFlipFullRankBelowCritical) {
  for (int m : {2, 3, 4}) {
    const double critical = (m - 1.0) / m;
    EXPECT_EQ(ntm_rank(NoiseTransitionMatrix::symmetric_flip(m, 0.45 * critical)), m);
    EXPECT_EQ(ntm_rank(NoiseTransitionMatrix::symmetric_flip(m, 0.99 * critical)), m);
    EXPECT_EQ(ntm_rank(NoiseTransitionMatrix::symmetric_flip(m, critical)), 1);
  }
}

TEST(DensityCorrelation, Conventions) {
  const LabelMask cl = gen_circle_rectangle(128);
  const DensityMap d = kde_density(cl, 1, 4);
  EXPECT_NEAR(density_correlation(d, d), 1.0, 1e-12);
  LabelMask flat(128, 128, 2, 1);
  EXPECT_EQ(density_correlation(d, kde_density(flat, 1, 4)), 0.0);
  EXPECT_THROW(density_correlation(d, kde_density(gen_circle_rectangle(64), 1, 4)),
               InvalidArgument);
}

TEST(DensityCorrelation, RclHighRlLow) {
  const LabelMask cl = gen_circle_rectangle(256);
  const DensityMap ref = kde_density(cl, 1, 8);
  const auto rcl = kde_density(random_flip(cl, 0.3, 1), 1, 8);
  const auto rl = kde_density(random_label(256, 256, 0.5, 2), 1, 8);
  EXPECT_GT(density_correlation(rcl, ref), 0.8);
  EXPECT_LT(std::abs(density_correlation(rl, ref)), 0.2);
}

TEST(ClassCount, IdentityRecoversClasses) {
  const LabelMask cl = gen_circle_rectangle(128);
  EXPECT_EQ(estimate_class_count(cl, cl, 1, 4).count, 2);
  const LabelMask mc = gen_multiclass(128, 128, 3, 3).mask;
  EXPECT_EQ(estimate_class_count_all(mc, mc, 4).count, 3);
}

TEST(ClassCount, RankOneFuses) {
  const LabelMask cl = gen_circle_rectangle(256);
  const LabelMask noisy = apply_ntm(cl, NoiseTransitionMatrix::uniform(2), 3);
  EXPECT_EQ(estimate_class_count(noisy, cl, 1, 8).count, 1);
}

TEST(ClassCount, FullRankSeparates) {
  const LabelMask cl = gen_circle_rectangle(256);
  EXPECT_EQ(estimate_class_count(apply_ntm(cl, kRcl, 4), cl, 1, 8).count, 2);
}

TEST(ClassCount, SmallRegionDropped) {
  LabelMask cl(64, 64, 2);
  for (int y = 30; y < 34; ++y)
    for (int x = 30; x < 34; ++x) cl(y, x) = 1;
  const auto est = estimate_class_count(cl, cl, 1, 4);
  ASSERT_EQ(est.regions.size(), 2u);
  EXPECT_TRUE(est.regions[1].dropped);
  EXPECT_FALSE(est.regions[0].dropped);
  EXPECT_EQ(est.count, 1);
  EXPECT_EQ(est.cluster_of_region[1], -1);
}

// The class count recovered from densities matches the NTM rank across a
// battery of full-rank and rank-deficient matrices.
TEST(ClassCount, EqualsRankBattery) {
  struct Case {
    std::vector<std::vector<double>> q;
  };
  const std::vector<Case> binary = {
      {{{1, 0}, {0, 1}}},       {{{0.7, 0.3}, {0.3, 0.7}}}, {{{0.9, 0.1}, {0.4, 0.6}}},
      {{{0.5, 0.5}, {0.5, 0.5}}}, {{{0.2, 0.8}, {0.2, 0.8}}},
  };
  const LabelMask circle = gen_circle_rectangle(256);
  std::uint64_t seed = 100;
  for (const auto& c : binary) {
    const NoiseTransitionMatrix q(c.q);
    const LabelMask noisy = apply_ntm(circle, q, ++seed);
    EXPECT_EQ(estimate_class_count_all(noisy, circle, 8).count, ntm_rank(q)) << seed;
  }
  const std::vector<Case> ternary = {
      {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}},
      {{{0.7, 0.15, 0.15}, {0.15, 0.7, 0.15}, {0.15, 0.15, 0.7}}},
      {{{0.6, 0.3, 0.1}, {0.2, 0.6, 0.2}, {0.1, 0.2, 0.7}}},
      {{{0.8, 0.1, 0.1}, {0.8, 0.1, 0.1}, {0.1, 0.1, 0.8}}},
      {{{0.2, 0.6, 0.2}, {0.1, 0.1, 0.8}, {0.1, 0.1, 0.8}}},
      {{{1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}}},
  };
  for (std::uint64_t s = 1; s <= 2; ++s) {
    const LabelMask cl = gen_multiclass(192, 192, 3, s).mask;
    for (const auto& c : ternary) {
      const NoiseTransitionMatrix q(c.q);
      const LabelMask noisy = apply_ntm(cl, q, ++seed);
      EXPECT_EQ(estimate_class_count_all(noisy, cl, 6).count, ntm_rank(q)) << seed;
    }
  }
}

TEST(ExpectationAgreement, WithinThreeStandardErrors) {
  const LabelMask cl = gen_circle_rectangle(128);
  const auto a = expectation_agreement(apply_ntm(cl, kRcl, 9), kRcl, cl, 1, 4);
  EXPECT_GT(a.interior_pixels, 0u);
  EXPECT_LT(a.mean_abs_deviation, 3 * a.standard_error);
}

TEST(Phantom, FullSizeSetting) {
  const auto r = phantom_experiment(256, kRcl, NoiseTransitionMatrix::uniform(2), 8);
  EXPECT_EQ(r.rcl.class_count_estimate, 2);
  EXPECT_EQ(r.rl.class_count_estimate, 1);
  EXPECT_EQ(r.rcl.ntm_rank, 2);
  EXPECT_EQ(r.rl.ntm_rank, 1);
  EXPECT_GE(r.rcl.density_correlation_to_cl - r.rl.density_correlation_to_cl, 0.5);
}

TEST(Phantom, IdentityReducesToClean) {
  const auto r = phantom_experiment(128, NoiseTransitionMatrix::identity(2),
                                    NoiseTransitionMatrix::uniform(2), 4);
  EXPECT_EQ(r.rcl_mask, r.cl_mask);
  EXPECT_NEAR(r.rcl.density_correlation_to_cl, 1.0, 1e-12);
}

TEST(Phantom, RejectsMulticlassNtm) {
  EXPECT_THROW(phantom_experiment(128, NoiseTransitionMatrix::identity(3),
                                  NoiseTransitionMatrix::uniform(2), 4),
               InvalidArgument);
}
