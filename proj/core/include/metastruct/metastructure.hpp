#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "metastruct/grid.hpp"
#include "metastruct/label_mask.hpp"
#include "metastruct/label_synthesis.hpp"

namespace metastruct {

/// Box-kernel spatial density of one class.
///
/// value(u) = #{class-m pixels within Chebyshev distance h of u} / (N (2h+1)^2)
/// with N the total number of class-m pixels. With zero padding, windows that
/// overhang the image see no points, so densities near the border are biased
/// low; the wrap mode treats the mask as a torus and is exactly normalised.
struct DensityMap {
  Grid<double> values;
  int class_index = 0;
  int bandwidth = 1;
  double point_count = 0.0;  // N for empirical maps, expected N for expected_density
};

enum class WindowBoundary { kZero, kWrap };

DensityMap kde_density(const LabelMask& mask, int class_index, int bandwidth,
                       WindowBoundary boundary = WindowBoundary::kZero);

/// Deterministic part of the density of class m after corrupting `cl` with q:
/// sum_j q(j, m) |S_j(u)| / (Nbar (2h+1)^2), Nbar = sum_j q(j, m) |{cl = j}|.
DensityMap expected_density(const NoiseTransitionMatrix& q, const LabelMask& cl, int class_index,
                            int bandwidth);

/// Numerical rank: singular values above tol * largest.
int ntm_rank(const NoiseTransitionMatrix& q, double tol = 1e-9);

/// Pearson correlation over pixels at least `bandwidth` from the border
/// (bandwidth of `a`). Returns 0 if either map is constant there.
double density_correlation(const DensityMap& a, const DensityMap& b);

struct RegionDensity {
  int cl_class = 0;
  std::size_t interior_pixels = 0;
  std::vector<double> mean;      // per density class, in units of 1/N (window fraction)
  std::vector<double> variance;  // same units
  bool dropped = false;          // interior smaller than one window
};

struct ClassCountEstimate {
  int count = 0;
  std::vector<RegionDensity> regions;
  std::vector<int> cluster_of_region;  // -1 for dropped regions
};

inline constexpr double kClusterThreshold = 0.25;

/// Number of distinguishable density classes of `noisy` (class m only) over
/// the regions of `cl`. Region means are clustered by single linkage with
/// merge distance threshold * (max - min window density).
ClassCountEstimate estimate_class_count(const LabelMask& noisy, const LabelMask& cl,
                                        int class_index, int bandwidth,
                                        double threshold = kClusterThreshold);

/// Same, but two regions stay apart if any class's density separates them.
ClassCountEstimate estimate_class_count_all(const LabelMask& noisy, const LabelMask& cl,
                                            int bandwidth, double threshold = kClusterThreshold);

struct ExpectationAgreement {
  double mean_abs_deviation = 0.0;
  double standard_error = 0.0;  // mean per-pixel binomial standard error
  std::size_t interior_pixels = 0;
};

/// Compares the empirical density of `noisy` with expected_density(q, cl) over
/// interior pixels. The standard error plugs q into the per-window binomial
/// variance sum_j q(j,m)(1-q(j,m))|S_j(u)|.
ExpectationAgreement expectation_agreement(const LabelMask& noisy, const NoiseTransitionMatrix& q,
                                 const LabelMask& cl, int class_index, int bandwidth);

struct MetaStructureReport {
  int class_count_estimate = 0;
  int ntm_rank = 0;
  double density_correlation_to_cl = 0.0;
  std::vector<RegionDensity> regions;
};

MetaStructureReport analyze_noisy_label(const LabelMask& noisy, const LabelMask& cl,
                                        const NoiseTransitionMatrix& q, int class_index,
                                        int bandwidth);

struct PhantomResult {
  MetaStructureReport rcl;
  MetaStructureReport rl;
  LabelMask cl_mask;
  LabelMask rcl_mask;
  LabelMask rl_mask;
  DensityMap cl_density;
  DensityMap rcl_density;
  DensityMap rl_density;
};

/// Circle-in-rectangle demo: corrupt with a full-rank and a rank-1 NTM and
/// analyse the foreground density of each.
PhantomResult phantom_experiment(int side, const NoiseTransitionMatrix& q_rcl,
                                 const NoiseTransitionMatrix& q_rl, int bandwidth,
                                 std::uint64_t seed = 6);

inline int default_bandwidth(int side) { return side / 32 < 1 ? 1 : side / 32; }

/// Plain-text matrix, one row per line, space separated.
void write_density_text(const std::filesystem::path& path, const DensityMap& map);
/// Heatmap rescaled so the maximum maps to 255.
void write_density_pgm(const std::filesystem::path& path, const DensityMap& map);

}  // namespace metastruct
