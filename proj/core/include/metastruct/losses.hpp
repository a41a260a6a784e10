#pragma once

#include "metastruct/grid.hpp"
#include "metastruct/label_mask.hpp"

namespace metastruct {

/// Loss value with its gradient with respect to the probability map.
struct LossResult {
  double value = 0.0;
  Grid<double> grad;
};

inline constexpr double kProbClip = 1e-7;
inline constexpr double kDetEpsilon = 1e-12;
inline constexpr double kIouEpsilon = 1e-6;

/// Mean binary cross-entropy over non-ignored pixels.
LossResult bce_loss(const ProbabilityMap& p, const LabelMask& y);

/// Joint-distribution matrix Q = (1/HW) [p; 1-p][s; 1-s]^T.
struct JointMatrix {
  double q00 = 0.0, q01 = 0.0, q10 = 0.0, q11 = 0.0;
  double det() const { return q00 * q11 - q01 * q10; }
};
JointMatrix joint_matrix(const ProbabilityMap& p, const Grid<double>& s);

/// -log(|det Q| + eps_det).
LossResult dmi_loss(const ProbabilityMap& p, const Grid<double>& s);
LossResult dmi_loss(const ProbabilityMap& p, const LabelMask& s);

/// 1 - sum(p y) / (sum(p + y - p y) + eps). Ignored pixels are skipped.
LossResult iou_loss(const ProbabilityMap& p, const LabelMask& y, double epsilon = kIouEpsilon);

Grid<double> to_soft(const LabelMask& mask);

}  // namespace metastruct
