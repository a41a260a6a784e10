#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "metastruct/grid.hpp"
#include "metastruct/label_mask.hpp"

namespace metastruct {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

struct MetricsRecord {
  double dice = 0.0;
  double iou = 0.0;
  double miou = 0.0;
  double acc = 0.0;
  double auc = 0.0;
  ConfusionCounts counts;
};

/// Binary counts over pixels not ignored in gt.
ConfusionCounts confusion_counts(const LabelMask& pred, const LabelMask& gt);

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const LabelMask& pred, const LabelMask& gt);
/// |A n B| / |A u B|; 1 when both are empty.
double iou(const LabelMask& pred, const LabelMask& gt);
/// Mean IoU over classes present in pred or gt.
double miou(const LabelMask& pred, const LabelMask& gt, int n_classes);
double accuracy(const LabelMask& pred, const LabelMask& gt);

/// ROC AUC as P(score of a positive > score of a negative), ties counting 1/2.
/// Throws UndefinedMetric if gt lacks positives or negatives.
double auc(const Grid<double>& scores, const LabelMask& gt);

/// `scores` drives AUC; pass the image for intensity-threshold methods.
MetricsRecord evaluate(const LabelMask& pred, const Grid<double>& scores, const LabelMask& gt);

struct ThresholdResult {
  LabelMask mask;
  int threshold_bin = 0;      // foreground = bins above this
  double threshold = 0.0;     // upper edge of threshold_bin in intensity units
  bool degenerate = false;    // constant image
};

inline constexpr int kHistogramBins = 256;
int histogram_bin(double intensity);

/// Otsu: 256-bin threshold maximising between-class variance (lowest on ties).
ThresholdResult otsu(const Image& image);

/// Foreground iff intensity > Gaussian local mean (sigma = window / 6,
/// border-replicated) + offset.
LabelMask adaptive_gaussian_threshold(const Image& image, int window, double offset);
Image gaussian_local_mean(const Image& image, int window);

inline constexpr int kDefaultAgtWindow = 15;
inline constexpr double kDefaultAgtOffset = 0.02;

struct EvaluationRow {
  std::string sample_id;
  std::string method;
  MetricsRecord metrics;
};

/// RFC-4180 CSV: sample_id,method,dice,iou,auc,acc
void write_evaluation_csv(const std::string& path, const std::vector<EvaluationRow>& rows);

}  // namespace metastruct
