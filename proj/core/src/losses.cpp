#include "metastruct/losses.hpp"

#include <algorithm>
#include <cmath>

namespace metastruct {
namespace {

void require_same_shape(const ProbabilityMap& p, int h, int w, const char* op) {
  if (p.height() != h || p.width() != w) throw InvalidArgument(std::string(op) + ": shape mismatch");
}

}  // namespace

Grid<double> to_soft(const LabelMask& mask) {
  Grid<double> s(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.ignored(i)) throw InvalidArgument("to_soft: mask contains ignored pixels");
    if (mask[i] > 1) throw InvalidArgument("to_soft: mask must be binary");
    s[i] = mask[i];
  }
  return s;
}

LossResult bce_loss(const ProbabilityMap& p, const LabelMask& y) {
  require_same_shape(p, y.height(), y.width(), "bce_loss");
  if (!y.binary()) throw InvalidArgument("bce_loss: labels must be binary");
  LossResult r{0.0, Grid<double>(p.height(), p.width(), 0.0)};
  std::size_t count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) count += !y.ignored(i);
  if (count == 0) throw InvalidArgument("bce_loss: every pixel is ignored");
  const double inv = 1.0 / static_cast<double>(count);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y.ignored(i)) continue;
    const double q = std::clamp(p[i], kProbClip, 1.0 - kProbClip);
    const double t = y[i];
    sum -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    r.grad[i] = (q - t) / (q * (1.0 - q)) * inv;
  }
  r.value = sum * inv;
  return r;
}

JointMatrix joint_matrix(const ProbabilityMap& p, const Grid<double>& s) {
  require_same_shape(p, s.height(), s.width(), "joint_matrix");
  JointMatrix q;
  for (std::size_t i = 0; i < p.size(); ++i) {
    q.q00 += p[i] * s[i];
    q.q01 += p[i] * (1.0 - s[i]);
    q.q10 += (1.0 - p[i]) * s[i];
    q.q11 += (1.0 - p[i]) * (1.0 - s[i]);
  }
  const double inv = 1.0 / static_cast<double>(p.size());
  q.q00 *= inv;
  q.q01 *= inv;
  q.q10 *= inv;
  q.q11 *= inv;
  return q;
}

LossResult dmi_loss(const ProbabilityMap& p, const Grid<double>& s) {
  if (p.size() < 2) throw InvalidArgument("dmi_loss: need at least two pixels");
  const JointMatrix q = joint_matrix(p, s);
  const double det = q.det();
  LossResult r{-std::log(std::abs(det) + kDetEpsilon), Grid<double>(p.height(), p.width(), 0.0)};
  // d det = tr(adj(Q) dQ); adj(Q) = [[q11, -q01], [-q10, q00]].
  // dQ/dp_i = (1/n) [[s_i, 1-s_i], [-s_i, -(1-s_i)]].
  const double sign = det > 0.0 ? 1.0 : (det < 0.0 ? -1.0 : 0.0);
  const double outer = -sign / (std::abs(det) + kDetEpsilon) / static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double si = s[i];
    const double ddet = q.q11 * si - q.q10 * (1.0 - si) + q.q01 * si - q.q00 * (1.0 - si);
    r.grad[i] = outer * ddet;
  }
  return r;
}

LossResult dmi_loss(const ProbabilityMap& p, const LabelMask& s) {
  require_same_shape(p, s.height(), s.width(), "dmi_loss");
  return dmi_loss(p, to_soft(s));
}

LossResult iou_loss(const ProbabilityMap& p, const LabelMask& y, double epsilon) {
  require_same_shape(p, y.height(), y.width(), "iou_loss");
  if (!(epsilon > 0.0)) throw InvalidArgument("iou_loss: epsilon must be > 0");
  if (!y.binary()) throw InvalidArgument("iou_loss: labels must be binary");
  double inter = 0.0, uni = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y.ignored(i)) continue;
    const double t = y[i];
    inter += p[i] * t;
    uni += p[i] + t - p[i] * t;
  }
  uni += epsilon;
  LossResult r{1.0 - inter / uni, Grid<double>(p.height(), p.width(), 0.0)};
  const double inv2 = 1.0 / (uni * uni);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y.ignored(i)) continue;
    const double t = y[i];
    // d(inter)/dp = t, d(uni)/dp = 1 - t.
    r.grad[i] = -(t * uni - inter * (1.0 - t)) * inv2;
  }
  return r;
}

}  // namespace metastruct
