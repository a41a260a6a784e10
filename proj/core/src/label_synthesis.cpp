#include "metastruct/label_synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metastruct/rng.hpp"

namespace metastruct {
namespace {

void require_binary(const LabelMask& m, const char* op) {
  if (!m.binary()) throw InvalidArgument(std::string(op) + ": requires a binary mask");
}

void require_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument(std::string(what) + " must lie in [0, 1]");
}

bool fg(const LabelMask& m, int y, int x) {
  return m.grid().in_bounds(y, x) && m(y, x) == 1;
}

}  // namespace

NoiseTransitionMatrix::NoiseTransitionMatrix(std::vector<std::vector<double>> rows) {
  n_ = static_cast<int>(rows.size());
  if (n_ < 2 || n_ > LabelMask::kMaxClasses) {
    throw InvalidArgument("noise transition matrix must be M x M with M in [2, 8]");
  }
  q_.reserve(static_cast<std::size_t>(n_) * n_);
  for (int i = 0; i < n_; ++i) {
    if (static_cast<int>(rows[i].size()) != n_) {
      throw InvalidArgument("noise transition matrix must be square");
    }
    double sum = 0.0;
    for (double v : rows[i]) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw InvalidArgument("noise transition matrix entries must be finite and non-negative");
      }
      sum += v;
      q_.push_back(v);
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw InvalidArgument("noise transition matrix row " + std::to_string(i) +
                            " sums to " + std::to_string(sum));
    }
  }
}

NoiseTransitionMatrix NoiseTransitionMatrix::identity(int n_classes) {
  std::vector<std::vector<double>> rows(n_classes, std::vector<double>(n_classes, 0.0));
  for (int i = 0; i < n_classes; ++i) rows[i][i] = 1.0;
  return NoiseTransitionMatrix(std::move(rows));
}

NoiseTransitionMatrix NoiseTransitionMatrix::uniform(int n_classes) {
  return NoiseTransitionMatrix(std::vector<std::vector<double>>(
      n_classes, std::vector<double>(n_classes, 1.0 / n_classes)));
}

NoiseTransitionMatrix NoiseTransitionMatrix::symmetric_flip(int n_classes, double p_flip) {
  require_probability(p_flip, "p_flip");
  std::vector<std::vector<double>> rows(n_classes,
                                        std::vector<double>(n_classes, p_flip / (n_classes - 1)));
  for (int i = 0; i < n_classes; ++i) rows[i][i] = 1.0 - p_flip;
  return NoiseTransitionMatrix(std::move(rows));
}

std::vector<std::vector<double>> NoiseTransitionMatrix::rows() const {
  std::vector<std::vector<double>> out(n_, std::vector<double>(n_));
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < n_; ++j) out[i][j] = (*this)(i, j);
  }
  return out;
}

LabelMask random_sample(const LabelMask& cl, double p_sample, std::uint64_t seed) {
  if (!(p_sample > 0.0 && p_sample <= 1.0)) {
    throw InvalidArgument("random_sample: p_sample must lie in (0, 1]");
  }
  Rng rng(derive_seed(seed, "random_sample"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LabelMask out = cl;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (unit(rng) >= p_sample) out[i] = out.ignore_value();
  }
  return out;
}

LabelMask random_flip(const LabelMask& cl, double p_flip, std::uint64_t seed) {
  if (!(p_flip >= 0.0 && p_flip < 1.0)) {
    throw InvalidArgument("random_flip: p_flip must lie in [0, 1)");
  }
  if (cl.has_ignored()) throw InvalidArgument("random_flip: input contains ignored pixels");
  const int m = cl.n_classes();
  Rng rng(derive_seed(seed, "random_flip"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> other(0, m - 2);
  LabelMask out = cl;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (unit(rng) >= p_flip) continue;
    const int target = other(rng);
    out[i] = static_cast<std::uint8_t>(target < out[i] ? target : target + 1);
  }
  return out;
}

LabelMask apply_ntm(const LabelMask& cl, const NoiseTransitionMatrix& q, std::uint64_t seed) {
  const int m = cl.n_classes();
  if (q.n_classes() != m) throw InvalidArgument("apply_ntm: matrix size does not match class count");
  if (cl.has_ignored()) throw InvalidArgument("apply_ntm: input contains ignored pixels");
  Rng rng(derive_seed(seed, "apply_ntm"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LabelMask out = cl;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int from = cl[i];
    const double u = unit(rng);
    double cum = 0.0;
    int to = m - 1;
    for (int j = 0; j < m; ++j) {
      cum += q(from, j);
      if (u < cum) {
        to = j;
        break;
      }
    }
    // Zero-probability trailing classes must never be drawn through rounding.
    while (q(from, to) == 0.0 && to > 0) --to;
    out[i] = static_cast<std::uint8_t>(to);
  }
  return out;
}

LabelMask dilate(const LabelMask& cl) {
  require_binary(cl, "dilate");
  LabelMask out(cl.height(), cl.width(), 2);
  for (int y = 0; y < cl.height(); ++y) {
    for (int x = 0; x < cl.width(); ++x) {
      bool any = false;
      for (int dy = -1; dy <= 1 && !any; ++dy) {
        for (int dx = -1; dx <= 1 && !any; ++dx) any = fg(cl, y + dy, x + dx);
      }
      out(y, x) = any ? 1 : 0;
    }
  }
  return out;
}

LabelMask erode(const LabelMask& cl) {
  require_binary(cl, "erode");
  LabelMask out(cl.height(), cl.width(), 2);
  for (int y = 0; y < cl.height(); ++y) {
    for (int x = 0; x < cl.width(); ++x) {
      bool all = true;
      for (int dy = -1; dy <= 1 && all; ++dy) {
        for (int dx = -1; dx <= 1 && all; ++dx) {
          all = !cl.grid().in_bounds(y + dy, x + dx) || cl(y + dy, x + dx) == 1;
        }
      }
      out(y, x) = all ? 1 : 0;
    }
  }
  return out;
}

namespace {

// Plain Zhang-Suen deletes an isolated 2x2 block in one sub-iteration. Drop
// from `marked` the first pixel of any 8-connected component it would empty.
void keep_last_of_component(const LabelMask& img, std::vector<std::size_t>& marked) {
  if (marked.empty()) return;
  const int h = img.height(), w = img.width();
  std::vector<char> is_marked(img.size(), 0);
  for (auto i : marked) is_marked[i] = 1;
  std::vector<int> comp(img.size(), -1);
  std::vector<std::size_t> stack;
  std::vector<std::size_t> spared;
  int next = 0;
  for (auto seed : marked) {
    if (comp[seed] >= 0) continue;
    bool survives = false;
    comp[seed] = next;
    stack.assign(1, seed);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      survives = survives || !is_marked[i];
      const int y = static_cast<int>(i) / w, x = static_cast<int>(i) % w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const std::size_t j = static_cast<std::size_t>(yy) * w + xx;
          if (img[j] != 1 || comp[j] >= 0) continue;
          comp[j] = next;
          stack.push_back(j);
        }
      }
    }
    if (!survives) spared.push_back(seed);
    ++next;
  }
  if (spared.empty()) return;
  std::erase_if(marked, [&](std::size_t i) {
    return std::find(spared.begin(), spared.end(), i) != spared.end();
  });
}

}  // namespace

LabelMask skeletonize(const LabelMask& cl) {
  require_binary(cl, "skeletonize");
  const int h = cl.height(), w = cl.width();
  LabelMask img(h, w, 2);
  for (std::size_t i = 0; i < cl.size(); ++i) img[i] = cl[i] == 1 ? 1 : 0;

  // Neighbours P2..P9, clockwise from north.
  constexpr int kDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  constexpr int kDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  std::vector<std::size_t> to_clear;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      to_clear.clear();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (img(y, x) != 1) continue;
          int p[8];
          int neighbours = 0;
          for (int k = 0; k < 8; ++k) {
            p[k] = fg(img, y + kDy[k], x + kDx[k]) ? 1 : 0;
            neighbours += p[k];
          }
          if (neighbours < 2 || neighbours > 6) continue;
          int transitions = 0;
          for (int k = 0; k < 8; ++k) transitions += (p[k] == 0 && p[(k + 1) % 8] == 1);
          if (transitions != 1) continue;
          // p[0]=P2 p[2]=P4 p[4]=P6 p[6]=P8
          if (pass == 0) {
            if (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0) continue;
          } else {
            if (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0) continue;
          }
          to_clear.push_back(static_cast<std::size_t>(y) * w + x);
        }
      }
      keep_last_of_component(img, to_clear);
      for (auto i : to_clear) img[i] = 0;
      changed = changed || !to_clear.empty();
    }
  }
  return img;
}

LabelMask random_label(int height, int width, double p_generate, std::uint64_t seed) {
  if (!(p_generate >= 0.0 && p_generate <= 0.5)) {
    throw InvalidArgument("random_label: p_generate must lie in [0, 0.5]");
  }
  Rng rng(derive_seed(seed, "random_label"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LabelMask out(height, width, 2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = unit(rng) < p_generate ? 1 : 0;
  return out;
}

double pixel_error_rate(const LabelMask& noisy, const LabelMask& cl) {
  if (!noisy.same_shape(cl)) throw InvalidArgument("pixel_error_rate: shape mismatch");
  std::size_t valid = 0, wrong = 0;
  for (std::size_t i = 0; i < cl.size(); ++i) {
    if (noisy.ignored(i) || cl.ignored(i)) continue;
    ++valid;
    wrong += (noisy[i] != cl[i]);
  }
  return valid == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(valid);
}

}  // namespace metastruct
