#include "metastruct/igtt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "metastruct/label_synthesis.hpp"
#include "metastruct/losses.hpp"
#include "metastruct/metrics.hpp"
#include "metastruct/rng.hpp"

namespace metastruct {
namespace {

bool constant_mask(const LabelMask& m) {
  const std::size_t fg = m.count(1);
  return fg == 0 || fg == m.size();
}

double dmi_value(const ProbabilityMap& p, const LabelMask& s) {
  Grid<double> soft(s.height(), s.width());
  for (std::size_t i = 0; i < s.size(); ++i) soft[i] = s[i] == 1 ? 1.0 : 0.0;
  return -std::log(std::abs(joint_matrix(p, soft).det()) + kDetEpsilon);
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t mid = v.size() / 2;
  return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

void IgttConfig::validate() const {
  if (threshold_count < 2) throw InvalidArgument("igtt: threshold_count must be >= 2");
  if (max_iters < 1) throw InvalidArgument("igtt: max_iters must be >= 1");
  if (ems_radius < 0) throw InvalidArgument("igtt: ems_radius must be >= 0");
  if (!(ems_sample_prob > 0.0 && ems_sample_prob <= 1.0)) {
    throw InvalidArgument("igtt: ems_sample_prob must lie in (0, 1]");
  }
  if (!(rl_init_prob >= 0.0 && rl_init_prob <= 0.5)) {
    throw InvalidArgument("igtt: rl_init_prob must lie in [0, 0.5]");
  }
  train.validate();
}

ThresholdSet threshold_set(const ProbabilityMap& p, int k_count) {
  if (k_count < 2) throw InvalidArgument("threshold_set: K must be >= 2");
  if (p.empty()) throw InvalidArgument("threshold_set: empty probability map");
  const auto [lo, hi] = std::minmax_element(p.values().begin(), p.values().end());
  ThresholdSet t;
  if (*hi == *lo) {
    t.values = {*lo};
    t.degenerate = true;
    return t;
  }
  const double delta = (*hi - *lo) / (k_count - 1);
  t.values.reserve(k_count);
  for (int k = 0; k < k_count; ++k) t.values.push_back(*lo + k * delta);
  // Pin the last threshold to p_max exactly.
  t.values.back() = *hi;
  return t;
}

std::vector<LabelMask> coarse_segmentations(const ProbabilityMap& p,
                                            const std::vector<double>& t_set) {
  if (t_set.empty()) throw InvalidArgument("coarse_segmentations: empty threshold set");
  std::vector<LabelMask> segs;
  segs.reserve(t_set.size());
  for (double t : t_set) {
    LabelMask s(p.height(), p.width(), 2);
    for (std::size_t i = 0; i < p.size(); ++i) s[i] = p[i] > t ? 1 : 0;
    segs.push_back(std::move(s));
  }
  return segs;
}

CandidateSelection select_candidate(const ProbabilityMap& p, const std::vector<LabelMask>& segs) {
  if (segs.empty()) throw InvalidArgument("select_candidate: no candidates");
  CandidateSelection out;
  double best = std::numeric_limits<double>::infinity();
  bool found = false;
  for (std::size_t k = 0; k < segs.size(); ++k) {
    if (constant_mask(segs[k])) continue;
    const double v = dmi_value(p, segs[k]);
    if (!found || v < best) {
      best = v;
      out.index = k;
      found = true;
    }
  }
  if (!found) {
    out.index = (segs.size() - 1) / 2;
    out.degenerate = segs.size() > 1;
  }
  out.mask = segs[out.index];
  return out;
}

LabelMask ems(const LabelMask& s, int radius, double sample_prob, std::uint64_t seed) {
  if (radius < 0) throw InvalidArgument("ems: radius must be >= 0");
  if (!(sample_prob > 0.0 && sample_prob <= 1.0)) {
    throw InvalidArgument("ems: sample_prob must lie in (0, 1]");
  }
  const LabelMask skeleton = skeletonize(s);
  Rng rng(derive_seed(seed, "ems"));
  std::uniform_int_distribution<int> shift(-radius, radius);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  LabelMask out(s.height(), s.width(), 2);
  for (int y = 0; y < s.height(); ++y) {
    for (int x = 0; x < s.width(); ++x) {
      if (skeleton(y, x) != 1) continue;
      const int ny = y + shift(rng);
      const int nx = x + shift(rng);
      const bool keep = unit(rng) < sample_prob;
      if (keep && out.grid().in_bounds(ny, nx)) out(ny, nx) = 1;
    }
  }
  return out;
}

CandidateSelection igtt_segment(const ProbabilityMap& p, const Image& image,
                                const IgttConfig& cfg) {
  const ThresholdSet t = threshold_set(p, cfg.threshold_count);
  CandidateSelection sel = select_candidate(p, coarse_segmentations(p, t.values));
  if (t.degenerate) sel.degenerate = true;
  if (cfg.bright_foreground && !constant_mask(sel.mask)) {
    double fg = 0.0, bg = 0.0;
    std::size_t nfg = 0, nbg = 0;
    for (std::size_t i = 0; i < image.size(); ++i) {
      if (sel.mask[i] == 1) {
        fg += image[i];
        ++nfg;
      } else {
        bg += image[i];
        ++nbg;
      }
    }
    if (fg / static_cast<double>(nfg) < bg / static_cast<double>(nbg)) {
      for (std::size_t i = 0; i < sel.mask.size(); ++i) sel.mask[i] = 1 - sel.mask[i];
    }
  }
  return sel;
}

double igtt_evaluate(const ModelParams& params, const LabelledSet& eval, const IgttConfig& cfg) {
  if (eval.images.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t i = 0; i < eval.images.size(); ++i) {
    const auto sel = igtt_segment(forward(params, eval.images[i]), eval.images[i], cfg);
    sum += dice(sel.mask, eval.labels[i]);
  }
  return sum / static_cast<double>(eval.images.size());
}

IgttState igtt_train(const std::vector<Image>& images, const IgttConfig& cfg,
                     const LabelledSet* eval, const IgttObserver& observer) {
  cfg.validate();
  if (images.empty()) throw InvalidArgument("igtt_train: empty dataset");
  const std::uint64_t root = cfg.train.seed;
  const std::size_t n = images.size();

  IgttState state;
  state.params = init_params(default_architecture(), derive_seed(root, "model"));
  state.pseudo_labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (cfg.rl_init) {
      state.pseudo_labels.push_back(random_label(images[i].height(), images[i].width(),
                                                 cfg.rl_init_prob, derive_seed(root, "rl_init", i)));
    } else {
      state.pseudo_labels.emplace_back(images[i].height(), images[i].width(), 2);
    }
  }
  std::vector<double> velocity(state.params.values.size(), 0.0);
  std::vector<ProbabilityMap> predictions(n);
  std::vector<CandidateSelection> selections(n);

  for (int it = 1; it <= cfg.max_iters; ++it) {
    parallel_for(n, cfg.train.threads,
                 [&](std::size_t i) { predictions[i] = forward(state.params, images[i]); });
    const EpochStats stats = run_epoch(state.params, velocity, images, state.pseudo_labels,
                                       cfg.train, static_cast<std::size_t>(it - 1));

    parallel_for(n, cfg.train.threads, [&](std::size_t i) {
      selections[i] = igtt_segment(predictions[i], images[i], cfg);
      state.pseudo_labels[i] =
          cfg.use_ems ? ems(selections[i].mask, cfg.ems_radius, cfg.ems_sample_prob,
                            derive_seed(root, "ems", static_cast<std::uint64_t>(it) * n + i))
                      : selections[i].mask;
    });

    IgttIteration rec;
    rec.iteration = it;
    std::vector<double> idx;
    for (const auto& s : selections) {
      idx.push_back(static_cast<double>(s.index));
      rec.degenerate_candidates += s.degenerate;
    }
    rec.median_threshold_index = median(std::move(idx));
    rec.dmi_loss = stats.dmi;
    rec.iou_loss = stats.iou;
    rec.eval_dice = eval ? igtt_evaluate(state.params, *eval, cfg)
                         : std::numeric_limits<double>::quiet_NaN();
    state.iteration = it;
    state.history.push_back(rec);
    if (observer) observer(state);
  }
  return state;
}

void write_igtt_log_csv(const std::string& path, const std::vector<IgttIteration>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "iter,chosen_threshold_index,dmi_loss,iou_loss,eval_dice\r\n";
  char buf[160];
  for (const auto& r : history) {
    int len = std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,", r.iteration,
                            r.median_threshold_index, r.dmi_loss, r.iou_loss);
    if (!std::isnan(r.eval_dice)) std::snprintf(buf + len, sizeof buf - len, "%.10g", r.eval_dice);
    out << buf << "\r\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace metastruct
