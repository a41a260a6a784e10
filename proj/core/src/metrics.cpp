#include "metastruct/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "filters.hpp"

namespace metastruct {
namespace {

void require_same_shape(const LabelMask& a, const LabelMask& b, const char* op) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(op) + ": shape mismatch");
}

__extension__ typedef __int128 int128;

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

ConfusionCounts confusion_counts(const LabelMask& pred, const LabelMask& gt) {
  require_same_shape(pred, gt, "confusion_counts");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.ignored(i)) continue;
    const bool p = pred[i] == 1, g = gt[i] == 1;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dice(const LabelMask& pred, const LabelMask& gt) {
  const auto c = confusion_counts(pred, gt);
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double iou(const LabelMask& pred, const LabelMask& gt) {
  const auto c = confusion_counts(pred, gt);
  const std::size_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double accuracy(const LabelMask& pred, const LabelMask& gt) {
  const auto c = confusion_counts(pred, gt);
  return c.total() == 0 ? 1.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double miou(const LabelMask& pred, const LabelMask& gt, int n_classes) {
  require_same_shape(pred, gt, "miou");
  if (n_classes < 2 || n_classes > LabelMask::kMaxClasses) {
    throw InvalidArgument("miou: n_classes must be in [2, 8]");
  }
  std::array<std::size_t, LabelMask::kMaxClasses> inter{}, uni{};
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.ignored(i)) continue;
    const int p = pred[i], g = gt[i];
    if (p == g) {
      ++inter[g];
      ++uni[g];
    } else {
      if (p < n_classes) ++uni[p];
      ++uni[g];
    }
  }
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < n_classes; ++c) {
    if (uni[c] == 0) continue;
    sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++present;
  }
  return present == 0 ? 1.0 : sum / present;
}

double auc(const Grid<double>& scores, const LabelMask& gt) {
  if (!gt.same_shape(scores)) throw InvalidArgument("auc: shape mismatch");
  std::vector<std::pair<double, bool>> items;
  items.reserve(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.ignored(i)) items.emplace_back(scores[i], gt[i] == 1);
  }
  std::sort(items.begin(), items.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double positive_rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < items.size();) {
    std::size_t j = i;
    while (j < items.size() && items[j].first == items[i].first) ++j;
    // Tied block gets the average of ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].second) {
        positive_rank_sum += rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = items.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetric("auc: ground truth needs both positive and negative pixels");
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

MetricsRecord evaluate(const LabelMask& pred, const Grid<double>& scores, const LabelMask& gt) {
  MetricsRecord r;
  r.counts = confusion_counts(pred, gt);
  r.dice = dice(pred, gt);
  r.iou = iou(pred, gt);
  r.miou = miou(pred, gt, gt.n_classes());
  r.acc = accuracy(pred, gt);
  try {
    r.auc = auc(scores, gt);
  } catch (const UndefinedMetric&) {
    r.auc = std::nan("");
  }
  return r;
}

int histogram_bin(double intensity) {
  const double v = std::clamp(intensity, 0.0, 1.0);
  return std::min(kHistogramBins - 1, static_cast<int>(v * kHistogramBins));
}

ThresholdResult otsu(const Image& image) {
  std::array<std::int64_t, kHistogramBins> hist{};
  for (double v : image.values()) ++hist[histogram_bin(v)];
  const std::int64_t n = static_cast<std::int64_t>(image.size());
  std::int64_t total_sum = 0;
  for (int b = 0; b < kHistogramBins; ++b) total_sum += b * hist[b];

  ThresholdResult r;
  r.mask = LabelMask(image.height(), image.width(), 2);
  // Between-class variance is proportional to (n S0 - N0 S)^2 / (N0 N1).
  // Up to 2^18 pixels the cross-multiplied comparison fits in 128 bits and is
  // exact; larger images fall back to long double.
  const bool exact = n <= (std::int64_t{1} << 18);
  int128 best_num = -1, best_den = 1;
  long double best_ratio = -1.0L;
  int best = -1;
  std::int64_t n0 = 0, s0 = 0;
  for (int t = 0; t < kHistogramBins - 1; ++t) {
    n0 += hist[t];
    s0 += t * hist[t];
    const std::int64_t n1 = n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const int128 diff = static_cast<int128>(n) * s0 - static_cast<int128>(n0) * total_sum;
    const int128 num = diff * diff;
    const int128 den = static_cast<int128>(n0) * n1;
    bool better;
    if (exact) {
      better = best < 0 || num * best_den > best_num * den;
    } else {
      const long double ratio = static_cast<long double>(num) / static_cast<long double>(den);
      better = best < 0 || ratio > best_ratio;
      if (better) best_ratio = ratio;
    }
    if (better) {
      best_num = num;
      best_den = den;
      best = t;
    }
  }
  if (best < 0) {
    r.degenerate = true;
    r.threshold_bin = kHistogramBins - 1;
    r.threshold = 1.0;
    return r;
  }
  r.threshold_bin = best;
  r.threshold = static_cast<double>(best + 1) / kHistogramBins;
  for (std::size_t i = 0; i < image.size(); ++i) r.mask[i] = histogram_bin(image[i]) > best ? 1 : 0;
  return r;
}

Image gaussian_local_mean(const Image& image, int window) {
  if (window < 3 || window % 2 == 0) {
    throw InvalidArgument("adaptive_gaussian_threshold: window must be odd and >= 3");
  }
  return detail::separable_filter(image, detail::gaussian_taps(window / 6.0, window / 2));
}

LabelMask adaptive_gaussian_threshold(const Image& image, int window, double offset) {
  const Image mean = gaussian_local_mean(image, window);
  LabelMask out(image.height(), image.width(), 2);
  for (std::size_t i = 0; i < image.size(); ++i) out[i] = image[i] > mean[i] + offset ? 1 : 0;
  return out;
}

void write_evaluation_csv(const std::string& path, const std::vector<EvaluationRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "sample_id,method,dice,iou,auc,acc\r\n";
  char buf[160];
  for (const auto& row : rows) {
    const auto& m = row.metrics;
    if (std::isnan(m.auc)) {
      std::snprintf(buf, sizeof buf, "%.10g,%.10g,,%.10g", m.dice, m.iou, m.acc);
    } else {
      std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g", m.dice, m.iou, m.auc, m.acc);
    }
    out << csv_field(row.sample_id) << ',' << csv_field(row.method) << ',' << buf << "\r\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace metastruct
