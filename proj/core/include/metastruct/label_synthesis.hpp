#pragma once

#include <cstdint>
#include <vector>

#include "metastruct/label_mask.hpp"

namespace metastruct {

/// Row-stochastic M x M matrix; entry (i, j) = P(noisy = j | true = i).
class NoiseTransitionMatrix {
 public:
  /// Throws InvalidArgument unless every row is non-negative and sums to 1 +- 1e-9.
  explicit NoiseTransitionMatrix(std::vector<std::vector<double>> rows);

  static NoiseTransitionMatrix identity(int n_classes);
  /// Every row equal to the uniform distribution (rank 1).
  static NoiseTransitionMatrix uniform(int n_classes);
  /// Diagonal 1 - p, off-diagonal p / (M - 1): the law of random_flip.
  static NoiseTransitionMatrix symmetric_flip(int n_classes, double p_flip);

  int n_classes() const noexcept { return n_; }
  double operator()(int from, int to) const noexcept { return q_[from * n_ + to]; }
  std::vector<std::vector<double>> rows() const;

 private:
  NoiseTransitionMatrix() = default;
  int n_ = 0;
  std::vector<double> q_;
};

/// Keeps each pixel with probability p_sample; the rest become ignore.
LabelMask random_sample(const LabelMask& cl, double p_sample, std::uint64_t seed);

/// Reassigns each pixel with probability p_flip uniformly among the other classes.
LabelMask random_flip(const LabelMask& cl, double p_flip, std::uint64_t seed);

/// Draws each pixel's noisy class from row `cl(pixel)` of q.
LabelMask apply_ntm(const LabelMask& cl, const NoiseTransitionMatrix& q, std::uint64_t seed);

// Binary morphology with a full 3x3 structuring element. Dilation pads with
// background and erosion with foreground, so opening shrinks and closing grows.
LabelMask dilate(const LabelMask& cl);
LabelMask erode(const LabelMask& cl);

/// Zhang-Suen thinning to a one-pixel-wide skeleton.
LabelMask skeletonize(const LabelMask& cl);

/// Image-independent labels: each pixel foreground with probability p_generate.
LabelMask random_label(int height, int width, double p_generate, std::uint64_t seed);

/// Fraction of pixels, ignored in neither mask, whose labels differ.
double pixel_error_rate(const LabelMask& noisy, const LabelMask& cl);

}  // namespace metastruct
