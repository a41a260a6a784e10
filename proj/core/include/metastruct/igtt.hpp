#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metastruct/grid.hpp"
#include "metastruct/label_mask.hpp"
#include "metastruct/segnet.hpp"

namespace metastruct {

struct IgttConfig {
  int threshold_count = 10;  // K
  int max_iters = 60;
  int ems_radius = 2;
  double ems_sample_prob = 0.5;
  bool use_ems = true;
  // Start from random labels instead of all-black ones.
  bool rl_init = false;
  double rl_init_prob = 0.1;
  // Foreground is the brighter side of a candidate; complement otherwise.
  bool bright_foreground = true;
  TrainConfig train{.learning_rate = 0.05, .momentum = 0.9, .batch_size = 4, .epochs = 1,
                    .seed = 1, .loss = LossKind::kDmiIou, .threads = 1, .grad_clip = 0.1};

  void validate() const;
};

struct ThresholdSet {
  std::vector<double> values;
  bool degenerate = false;  // p_max == p_min
};

/// T = {p_min + k (p_max - p_min) / (K - 1) : k = 0..K-1}.
ThresholdSet threshold_set(const ProbabilityMap& p, int k_count);

/// S_k = [p > t_k], ordered like t_set.
std::vector<LabelMask> coarse_segmentations(const ProbabilityMap& p,
                                            const std::vector<double>& t_set);

struct CandidateSelection {
  LabelMask mask;
  std::size_t index = 0;
  bool degenerate = false;  // every candidate was all-empty or all-full
};

/// argmin_k dmi_loss(p, S_k), skipping constant masks, smallest k on ties.
CandidateSelection select_candidate(const ProbabilityMap& p, const std::vector<LabelMask>& segs);

/// Skeletonise, shift each skeleton pixel uniformly within Chebyshev radius r
/// (off-image shifts dropped), keep each with probability sample_prob.
LabelMask ems(const LabelMask& s, int radius, double sample_prob, std::uint64_t seed);

/// The iGTT inference rule for one image: thresholds, DMI candidate choice,
/// polarity fix. Returns the segmentation and the chosen threshold index.
CandidateSelection igtt_segment(const ProbabilityMap& p, const Image& image,
                                const IgttConfig& cfg);

struct IgttIteration {
  int iteration = 0;
  double median_threshold_index = 0.0;
  double dmi_loss = 0.0;
  double iou_loss = 0.0;
  double eval_dice = 0.0;  // NaN without an evaluation set
  std::size_t degenerate_candidates = 0;
};

struct IgttState {
  std::vector<LabelMask> pseudo_labels;
  ModelParams params;
  int iteration = 0;
  std::vector<IgttIteration> history;
};

/// Called after each iteration (for snapshots); may be empty.
using IgttObserver = std::function<void(const IgttState&)>;

/// Unsupervised iterative ground-truth training. `eval` (images + CL) is
/// only used to log Dice; it never feeds training.
IgttState igtt_train(const std::vector<Image>& images, const IgttConfig& cfg,
                     const LabelledSet* eval = nullptr, const IgttObserver& observer = {});

/// Mean per-image Dice of igtt_segment against the reference masks.
double igtt_evaluate(const ModelParams& params, const LabelledSet& eval, const IgttConfig& cfg);

void write_igtt_log_csv(const std::string& path, const std::vector<IgttIteration>& history);

}  // namespace metastruct
