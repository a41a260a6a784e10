#include "metastruct/metastructure.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "filters.hpp"
#include "metastruct/datagen.hpp"
#include "metastruct/pgm.hpp"
#include "metastruct/rng.hpp"

namespace metastruct {
namespace {

void check_density_args(const LabelMask& mask, int class_index, int bandwidth) {
  if (bandwidth < 1) throw InvalidArgument("bandwidth must be >= 1");
  if (class_index < 0 || class_index >= mask.n_classes()) {
    throw InvalidArgument("class index out of range");
  }
}

double window_area(int bandwidth) {
  const double side = 2.0 * bandwidth + 1.0;
  return side * side;
}

// Pixels whose whole window lies inside the image.
bool interior(int y, int x, int h, int w, int bandwidth) {
  return y >= bandwidth && y < h - bandwidth && x >= bandwidth && x < w - bandwidth;
}

Grid<double> class_sat(const LabelMask& mask, int cls) {
  return detail::summed_area(mask.height(), mask.width(),
                             [&](int y, int x) { return mask(y, x) == cls ? 1.0 : 0.0; });
}

double window_count(const Grid<double>& sat, int y, int x, int h) {
  return detail::box_sum(sat, y - h, x - h, y + h, x + h);
}

int single_linkage_components(const std::vector<std::vector<bool>>& linked, std::vector<int>& label) {
  const int n = static_cast<int>(linked.size());
  label.assign(n, -1);
  int clusters = 0;
  for (int s = 0; s < n; ++s) {
    if (label[s] != -1) continue;
    std::vector<int> stack{s};
    label[s] = clusters;
    while (!stack.empty()) {
      const int a = stack.back();
      stack.pop_back();
      for (int b = 0; b < n; ++b) {
        if (label[b] == -1 && linked[a][b]) {
          label[b] = clusters;
          stack.push_back(b);
        }
      }
    }
    ++clusters;
  }
  return clusters;
}

// Region statistics of the density maps for every CL class. Region pixels are
// those whose window is entirely inside the image and entirely of that class.
std::vector<RegionDensity> region_densities(const LabelMask& cl,
                                            const std::vector<DensityMap>& maps, int bandwidth) {
  const int h = cl.height(), w = cl.width();
  const double area = window_area(bandwidth);
  std::vector<RegionDensity> regions(cl.n_classes());
  for (int j = 0; j < cl.n_classes(); ++j) {
    regions[j].cl_class = j;
    regions[j].mean.assign(maps.size(), 0.0);
    regions[j].variance.assign(maps.size(), 0.0);
    const Grid<double> sat = class_sat(cl, j);
    std::vector<std::size_t> pixels;
    for (int y = bandwidth; y < h - bandwidth; ++y) {
      for (int x = bandwidth; x < w - bandwidth; ++x) {
        if (window_count(sat, y, x, bandwidth) == area) {
          pixels.push_back(static_cast<std::size_t>(y) * w + x);
        }
      }
    }
    regions[j].interior_pixels = pixels.size();
    if (static_cast<double>(pixels.size()) < area) {
      regions[j].dropped = true;
      continue;
    }
    for (std::size_t m = 0; m < maps.size(); ++m) {
      // Window fractions: density * N.
      const double scale = maps[m].point_count;
      double sum = 0.0;
      for (auto i : pixels) sum += maps[m].values[i] * scale;
      const double mean = sum / static_cast<double>(pixels.size());
      double ss = 0.0;
      for (auto i : pixels) {
        const double d = maps[m].values[i] * scale - mean;
        ss += d * d;
      }
      regions[j].mean[m] = mean;
      regions[j].variance[m] = ss / static_cast<double>(pixels.size());
    }
  }
  return regions;
}

// Range of window fractions over interior pixels.
double interior_range(const DensityMap& map) {
  const int h = map.values.height(), w = map.values.width();
  double lo = 1e300, hi = -1e300;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!interior(y, x, h, w, map.bandwidth)) continue;
      const double v = map.values(y, x) * map.point_count;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return hi >= lo ? hi - lo : 0.0;
}

ClassCountEstimate cluster_regions(const LabelMask& cl, const std::vector<DensityMap>& maps,
                                   int bandwidth, double threshold) {
  ClassCountEstimate est;
  est.regions = region_densities(cl, maps, bandwidth);
  std::vector<double> cut(maps.size());
  for (std::size_t m = 0; m < maps.size(); ++m) cut[m] = threshold * interior_range(maps[m]);

  std::vector<int> kept;
  for (int j = 0; j < static_cast<int>(est.regions.size()); ++j) {
    if (!est.regions[j].dropped) kept.push_back(j);
  }
  const std::size_t n = kept.size();
  std::vector<std::vector<bool>> linked(n, std::vector<bool>(n, false));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      bool close = true;
      for (std::size_t m = 0; m < maps.size(); ++m) {
        const double d = std::abs(est.regions[kept[a]].mean[m] - est.regions[kept[b]].mean[m]);
        // Equal means are never separated, even when the map is constant.
        if (d > cut[m]) close = false;
      }
      linked[a][b] = close;
    }
  }
  std::vector<int> label;
  est.count = single_linkage_components(linked, label);
  est.cluster_of_region.assign(est.regions.size(), -1);
  for (std::size_t a = 0; a < n; ++a) est.cluster_of_region[kept[a]] = label[a];
  if (n == 0) est.count = 0;
  return est;
}

}  // namespace

DensityMap kde_density(const LabelMask& mask, int class_index, int bandwidth,
                       WindowBoundary boundary) {
  check_density_args(mask, class_index, bandwidth);
  const int h = mask.height(), w = mask.width();
  DensityMap out{Grid<double>(h, w, 0.0), class_index, bandwidth,
                 static_cast<double>(mask.count(static_cast<std::uint8_t>(class_index)))};
  if (out.point_count == 0.0) return out;
  const double norm = 1.0 / (out.point_count * window_area(bandwidth));

  if (boundary == WindowBoundary::kZero) {
    const Grid<double> sat = class_sat(mask, class_index);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) out.values(y, x) = window_count(sat, y, x, bandwidth) * norm;
    }
    return out;
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int count = 0;
      for (int dy = -bandwidth; dy <= bandwidth; ++dy) {
        const int yy = ((y + dy) % h + h) % h;
        for (int dx = -bandwidth; dx <= bandwidth; ++dx) {
          const int xx = ((x + dx) % w + w) % w;
          count += (mask(yy, xx) == class_index);
        }
      }
      out.values(y, x) = count * norm;
    }
  }
  return out;
}

DensityMap expected_density(const NoiseTransitionMatrix& q, const LabelMask& cl, int class_index,
                            int bandwidth) {
  check_density_args(cl, class_index, bandwidth);
  if (q.n_classes() != cl.n_classes()) {
    throw InvalidArgument("expected_density: matrix size does not match class count");
  }
  const int h = cl.height(), w = cl.width();
  double expected_n = 0.0;
  for (int j = 0; j < cl.n_classes(); ++j) {
    expected_n += q(j, class_index) * static_cast<double>(cl.count(static_cast<std::uint8_t>(j)));
  }
  DensityMap out{Grid<double>(h, w, 0.0), class_index, bandwidth, expected_n};
  if (expected_n == 0.0) return out;
  const double norm = 1.0 / (expected_n * window_area(bandwidth));
  for (int j = 0; j < cl.n_classes(); ++j) {
    const double weight = q(j, class_index);
    if (weight == 0.0) continue;
    const Grid<double> sat = class_sat(cl, j);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.values(y, x) += weight * window_count(sat, y, x, bandwidth) * norm;
      }
    }
  }
  return out;
}

int ntm_rank(const NoiseTransitionMatrix& q, double tol) {
  const int n = q.n_classes();
  Eigen::MatrixXd m(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) m(i, j) = q(i, j);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  const double top = s.size() > 0 ? s(0) : 0.0;
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) rank += (s(i) > tol * top);
  return rank;
}

double density_correlation(const DensityMap& a, const DensityMap& b) {
  if (!a.values.same_shape(b.values)) throw InvalidArgument("density_correlation: shape mismatch");
  const int h = a.values.height(), w = a.values.width();
  const int margin = a.bandwidth;
  double sa = 0.0, sb = 0.0;
  std::size_t n = 0;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      sa += a.values(y, x);
      sb += b.values(y, x);
      ++n;
    }
  }
  if (n == 0) return 0.0;
  const double ma = sa / n, mb = sb / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      const double da = a.values(y, x) - ma, db = b.values(y, x) - mb;
      cov += da * db;
      va += da * da;
      vb += db * db;
    }
  }
  // Relative guard: rounding in the mean leaves ~1e-32 residue on constant maps.
  const double tiny = 1e-24;
  if (va <= tiny * ma * ma * n || vb <= tiny * mb * mb * n || va == 0.0 || vb == 0.0) return 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

ClassCountEstimate estimate_class_count(const LabelMask& noisy, const LabelMask& cl,
                                        int class_index, int bandwidth, double threshold) {
  if (!noisy.same_shape(cl)) throw InvalidArgument("estimate_class_count: shape mismatch");
  return cluster_regions(cl, {kde_density(noisy, class_index, bandwidth)}, bandwidth, threshold);
}

ClassCountEstimate estimate_class_count_all(const LabelMask& noisy, const LabelMask& cl,
                                            int bandwidth, double threshold) {
  if (!noisy.same_shape(cl)) throw InvalidArgument("estimate_class_count_all: shape mismatch");
  std::vector<DensityMap> maps;
  for (int m = 0; m < noisy.n_classes(); ++m) maps.push_back(kde_density(noisy, m, bandwidth));
  return cluster_regions(cl, maps, bandwidth, threshold);
}

ExpectationAgreement expectation_agreement(const LabelMask& noisy, const NoiseTransitionMatrix& q,
                                 const LabelMask& cl, int class_index, int bandwidth) {
  const DensityMap empirical = kde_density(noisy, class_index, bandwidth);
  const DensityMap expected = expected_density(q, cl, class_index, bandwidth);
  const int h = cl.height(), w = cl.width();
  std::vector<Grid<double>> sats;
  for (int j = 0; j < cl.n_classes(); ++j) sats.push_back(class_sat(cl, j));
  const double norm =
      expected.point_count > 0 ? 1.0 / (expected.point_count * window_area(bandwidth)) : 0.0;

  ExpectationAgreement out;
  double dev = 0.0, se = 0.0;
  for (int y = bandwidth; y < h - bandwidth; ++y) {
    for (int x = bandwidth; x < w - bandwidth; ++x) {
      dev += std::abs(empirical.values(y, x) - expected.values(y, x));
      double var = 0.0;
      for (int j = 0; j < cl.n_classes(); ++j) {
        const double p = q(j, class_index);
        var += p * (1.0 - p) * window_count(sats[j], y, x, bandwidth);
      }
      se += std::sqrt(var) * norm;
      ++out.interior_pixels;
    }
  }
  if (out.interior_pixels > 0) {
    out.mean_abs_deviation = dev / static_cast<double>(out.interior_pixels);
    out.standard_error = se / static_cast<double>(out.interior_pixels);
  }
  return out;
}

MetaStructureReport analyze_noisy_label(const LabelMask& noisy, const LabelMask& cl,
                                        const NoiseTransitionMatrix& q, int class_index,
                                        int bandwidth) {
  MetaStructureReport report;
  const auto est = estimate_class_count(noisy, cl, class_index, bandwidth);
  report.class_count_estimate = est.count;
  report.regions = est.regions;
  report.ntm_rank = ntm_rank(q);
  report.density_correlation_to_cl = density_correlation(
      kde_density(noisy, class_index, bandwidth), kde_density(cl, class_index, bandwidth));
  return report;
}

PhantomResult phantom_experiment(int side, const NoiseTransitionMatrix& q_rcl,
                                 const NoiseTransitionMatrix& q_rl, int bandwidth,
                                 std::uint64_t seed) {
  if (q_rcl.n_classes() != 2 || q_rl.n_classes() != 2) {
    throw InvalidArgument("phantom_experiment: binary noise transition matrices required");
  }
  PhantomResult r;
  r.cl_mask = gen_circle_rectangle(side);
  r.rcl_mask = apply_ntm(r.cl_mask, q_rcl, derive_seed(seed, "phantom/rcl"));
  r.rl_mask = apply_ntm(r.cl_mask, q_rl, derive_seed(seed, "phantom/rl"));
  r.cl_density = kde_density(r.cl_mask, 1, bandwidth);
  r.rcl_density = kde_density(r.rcl_mask, 1, bandwidth);
  r.rl_density = kde_density(r.rl_mask, 1, bandwidth);
  r.rcl = analyze_noisy_label(r.rcl_mask, r.cl_mask, q_rcl, 1, bandwidth);
  r.rl = analyze_noisy_label(r.rl_mask, r.cl_mask, q_rl, 1, bandwidth);
  return r;
}

void write_density_text(const std::filesystem::path& path, const DensityMap& map) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  char buf[64];
  for (int y = 0; y < map.values.height(); ++y) {
    for (int x = 0; x < map.values.width(); ++x) {
      std::snprintf(buf, sizeof buf, "%s%.10g", x == 0 ? "" : " ", map.values(y, x));
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_density_pgm(const std::filesystem::path& path, const DensityMap& map) {
  double top = 0.0;
  for (double v : map.values.values()) top = std::max(top, v);
  Grid<std::uint8_t> pixels(map.values.height(), map.values.width(), 0);
  if (top > 0.0) {
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * map.values[i] / top));
    }
  }
  write_pgm(path, pixels);
}

}  // namespace metastruct
