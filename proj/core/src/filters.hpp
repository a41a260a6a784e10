#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "metastruct/grid.hpp"

namespace metastruct::detail {

// Normalised 1-D Gaussian taps for offsets -radius..radius.
inline std::vector<double> gaussian_taps(double sigma, int radius) {
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    taps[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    sum += taps[k + radius];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

// Separable correlation with border replication.
inline Grid<double> separable_filter(const Grid<double>& src, const std::vector<double>& taps) {
  const int h = src.height(), w = src.width();
  const int radius = static_cast<int>(taps.size() / 2);
  Grid<double> tmp(h, w), dst(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += taps[k + radius] * src(y, std::clamp(x + k, 0, w - 1));
      }
      tmp(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += taps[k + radius] * tmp(std::clamp(y + k, 0, h - 1), x);
      }
      dst(y, x) = acc;
    }
  }
  return dst;
}

inline Grid<double> gaussian_blur(const Grid<double>& src, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  return separable_filter(src, gaussian_taps(sigma, radius));
}

// Summed-area table with one row/column of zero padding: sat(y+1, x+1) is the
// sum over [0..y] x [0..x].
template <typename Pred>
Grid<double> summed_area(int height, int width, Pred&& value) {
  Grid<double> sat(height + 1, width + 1, 0.0);
  for (int y = 0; y < height; ++y) {
    double row = 0.0;
    for (int x = 0; x < width; ++x) {
      row += value(y, x);
      sat(y + 1, x + 1) = sat(y, x + 1) + row;
    }
  }
  return sat;
}

// Sum over the clipped box [y0, y1] x [x0, x1] (inclusive).
inline double box_sum(const Grid<double>& sat, int y0, int x0, int y1, int x1) {
  const int h = sat.height() - 1, w = sat.width() - 1;
  y0 = std::max(y0, 0);
  x0 = std::max(x0, 0);
  y1 = std::min(y1, h - 1);
  x1 = std::min(x1, w - 1);
  if (y0 > y1 || x0 > x1) return 0.0;
  return sat(y1 + 1, x1 + 1) - sat(y0, x1 + 1) - sat(y1 + 1, x0) + sat(y0, x0);
}

}  // namespace metastruct::detail
