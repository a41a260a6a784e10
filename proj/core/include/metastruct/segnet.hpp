#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "metastruct/grid.hpp"
#include "metastruct/label_mask.hpp"

namespace metastruct {

enum class Activation : std::uint32_t { kRelu = 0, kSigmoid = 1 };

/// Stride-1 same-size convolution layer.
struct LayerSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;  // odd
  Activation activation = Activation::kRelu;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(in_channels) * out_channels * kernel * kernel;
  }
  std::size_t param_count() const { return weight_count() + out_channels; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer specs plus one flat parameter vector. Each layer contributes its
/// weights [out][in][ky][kx] followed by its biases.
struct ModelParams {
  std::vector<LayerSpec> layers;
  std::vector<double> values;

  std::size_t layer_offset(std::size_t layer) const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// conv3x3(1->8) relu, conv3x3(8->16) relu, conv3x3(16->8) relu, conv1x1(8->1) sigmoid.
std::vector<LayerSpec> default_architecture();
std::size_t param_count(std::span<const LayerSpec> layers);

/// Weights uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases zero.
ModelParams init_params(std::vector<LayerSpec> layers, std::uint64_t seed);
ModelParams zero_params(std::vector<LayerSpec> layers);

enum class Padding { kZero, kWrap };

inline constexpr int kMinInputSide = 16;

/// Activations kept for backpropagation.
struct ForwardCache {
  int height = 0;
  int width = 0;
  Padding padding = Padding::kZero;
  std::vector<std::vector<double>> inputs;  // input of every layer, CHW
  std::vector<double> logits;               // final pre-sigmoid values
  ProbabilityMap output;
};

ProbabilityMap forward(const ModelParams& params, const Image& image,
                       Padding padding = Padding::kZero);
ForwardCache forward_cached(const ModelParams& params, const Image& image,
                            Padding padding = Padding::kZero);

/// Parameter gradient given dL/dp for the cached forward pass.
std::vector<double> backward(const ModelParams& params, const ForwardCache& cache,
                             const Grid<double>& grad_output);

/// v <- momentum v + g; theta <- theta - lr v. Throws TrainingDiverged on a
/// non-finite gradient.
void sgd_step(std::span<double> params, std::span<const double> gradient, double learning_rate,
              double momentum, std::span<double> velocity, std::size_t epoch = 0);

enum class LossKind { kBce, kDmiIou };
enum class GradientCheckLoss { kBce, kDmi, kIou };

struct TrainConfig {
  double learning_rate = 0.2;
  double momentum = 0.9;
  int batch_size = 4;
  int epochs = 60;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::kBce;
  int threads = 1;
  // Rescale the batch gradient to at most this L2 norm; 0 disables.
  double grad_clip = 0.0;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> test_dice;  // NaN when no evaluation set was given
  std::vector<double> wall_seconds;
};

/// Images with their (possibly noisy) training labels or clean reference masks.
struct LabelledSet {
  std::vector<Image> images;
  std::vector<LabelMask> labels;
};

struct TrainResult {
  ModelParams params;
  TrainHistory history;
};

struct EpochStats {
  double loss = 0.0;  // mean total loss per image
  double dmi = 0.0;   // DMI component (DMI+IOU only)
  double iou = 0.0;   // IOU component (DMI+IOU only)
};

/// One shuffled pass of mini-batch SGD over (images, labels) with cfg.loss.
/// `epoch` (0-based) selects the shuffle stream.
EpochStats run_epoch(ModelParams& params, std::vector<double>& velocity,
                     const std::vector<Image>& images, const std::vector<LabelMask>& labels,
                     const TrainConfig& cfg, std::size_t epoch);

/// Mini-batch SGD on BCE, with test Dice (threshold 0.5) after every epoch.
/// `initial` overrides the seeded initialisation when given.
TrainResult train_supervised(const LabelledSet& train, const TrainConfig& cfg,
                             const LabelledSet* eval = nullptr,
                             const ModelParams* initial = nullptr);

/// Binarise at `threshold` (foreground iff p > threshold).
LabelMask binarize(const ProbabilityMap& p, double threshold = 0.5);

/// Mean per-image Dice of forward(...) > 0.5 against the reference masks.
double evaluate_dice(const ModelParams& params, const LabelledSet& eval,
                     double threshold = 0.5);

/// Central finite differences (step 1e-5) on an 8x8 input against the analytic
/// gradient for ~50 random parameters; returns the max relative error.
double gradient_check(GradientCheckLoss loss, std::uint64_t seed, int n_params = 50);

/// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

void write_history_csv(const std::string& path, const TrainHistory& history);

}  // namespace metastruct
