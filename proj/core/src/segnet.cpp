#include "metastruct/segnet.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "metastruct/losses.hpp"
#include "metastruct/metrics.hpp"
#include "metastruct/rng.hpp"

namespace metastruct {
namespace {

int wrap(int v, int n) { return ((v % n) + n) % n; }

// out[o] = bias[o] + sum_i w[o][i] * in[i], same-size output.
void conv_forward(const double* in, const LayerSpec& spec, int h, int w, const double* weights,
                  const double* bias, double* out, Padding padding) {
  const int k = spec.kernel, r = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int o = 0; o < spec.out_channels; ++o) {
    double* op = out + o * hw;
    std::fill(op, op + hw, bias[o]);
    for (int i = 0; i < spec.in_channels; ++i) {
      const double* ip = in + i * hw;
      const double* wk = weights + (static_cast<std::size_t>(o) * spec.in_channels + i) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - r;
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - r;
          const double wv = wk[ky * k + kx];
          if (padding == Padding::kZero) {
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int y = y0; y < y1; ++y) {
              const double* src = ip + static_cast<std::size_t>(y + dy) * w + dx;
              double* dst = op + static_cast<std::size_t>(y) * w;
              for (int x = x0; x < x1; ++x) dst[x] += wv * src[x];
            }
          } else {
            for (int y = 0; y < h; ++y) {
              const double* src = ip + static_cast<std::size_t>(wrap(y + dy, h)) * w;
              double* dst = op + static_cast<std::size_t>(y) * w;
              for (int x = 0; x < w; ++x) dst[x] += wv * src[wrap(x + dx, w)];
            }
          }
        }
      }
    }
  }
}

// Accumulates weight/bias gradients and (optionally) the input gradient.
void conv_backward(const double* in, const LayerSpec& spec, int h, int w, const double* weights,
                   const double* grad_out, double* grad_w, double* grad_b, double* grad_in,
                   Padding padding) {
  const int k = spec.kernel, r = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  if (grad_in) std::fill(grad_in, grad_in + spec.in_channels * hw, 0.0);
  for (int o = 0; o < spec.out_channels; ++o) {
    const double* g = grad_out + o * hw;
    double bsum = 0.0;
    for (std::size_t p = 0; p < hw; ++p) bsum += g[p];
    grad_b[o] += bsum;
    for (int i = 0; i < spec.in_channels; ++i) {
      const double* ip = in + i * hw;
      double* gi = grad_in ? grad_in + i * hw : nullptr;
      const std::size_t widx = (static_cast<std::size_t>(o) * spec.in_channels + i) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        const int dy = ky - r;
        for (int kx = 0; kx < k; ++kx) {
          const int dx = kx - r;
          const double wv = weights[widx + ky * k + kx];
          double acc = 0.0;
          if (padding == Padding::kZero) {
            const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
            const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
            for (int y = y0; y < y1; ++y) {
              const std::size_t src_row = static_cast<std::size_t>(y + dy) * w + dx;
              const double* src = ip + src_row;
              const double* gr = g + static_cast<std::size_t>(y) * w;
              for (int x = x0; x < x1; ++x) acc += gr[x] * src[x];
              if (gi) {
                double* dst = gi + src_row;
                for (int x = x0; x < x1; ++x) dst[x] += wv * gr[x];
              }
            }
          } else {
            for (int y = 0; y < h; ++y) {
              const std::size_t row = static_cast<std::size_t>(wrap(y + dy, h)) * w;
              const double* gr = g + static_cast<std::size_t>(y) * w;
              for (int x = 0; x < w; ++x) {
                const std::size_t s = row + wrap(x + dx, w);
                acc += gr[x] * ip[s];
                if (gi) gi[s] += wv * gr[x];
              }
            }
          }
          grad_w[widx + ky * k + kx] += acc;
        }
      }
    }
  }
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_input(const Image& image) {
  if (image.height() < kMinInputSide || image.width() < kMinInputSide) {
    throw InvalidArgument("forward: input must be at least 16x16");
  }
}

ForwardCache forward_impl(const ModelParams& params, const Image& image, Padding padding) {
  ForwardCache cache;
  cache.height = image.height();
  cache.width = image.width();
  cache.padding = padding;
  const std::size_t hw = image.size();
  if (params.layers.empty() || params.layers.front().in_channels != 1) {
    throw InvalidArgument("forward: model must take one input channel");
  }
  if (params.values.size() != param_count(params.layers)) {
    throw InvalidArgument("forward: parameter vector does not match layer specs");
  }
  cache.inputs.reserve(params.layers.size());
  cache.inputs.emplace_back(image.values().begin(), image.values().end());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const LayerSpec& spec = params.layers[l];
    std::vector<double> out(spec.out_channels * hw);
    const double* weights = params.values.data() + offset;
    const double* bias = weights + spec.weight_count();
    conv_forward(cache.inputs.back().data(), spec, cache.height, cache.width, weights, bias,
                 out.data(), padding);
    offset += spec.param_count();
    const bool last = l + 1 == params.layers.size();
    if (last) {
      if (spec.out_channels != 1 || spec.activation != Activation::kSigmoid) {
        throw InvalidArgument("forward: final layer must be a single sigmoid channel");
      }
      cache.logits = std::move(out);
    } else {
      if (spec.activation == Activation::kRelu) {
        for (auto& v : out) v = v > 0.0 ? v : 0.0;
      } else {
        for (auto& v : out) v = sigmoid(v);
      }
      cache.inputs.push_back(std::move(out));
    }
  }
  cache.output = ProbabilityMap(cache.height, cache.width);
  for (std::size_t p = 0; p < hw; ++p) cache.output[p] = sigmoid(cache.logits[p]);
  return cache;
}

// Per-image loss and dL/dp for the configured training loss.
struct ImageLoss {
  double total = 0.0, dmi = 0.0, iou = 0.0;
  Grid<double> grad;
};

ImageLoss image_loss(LossKind kind, const ProbabilityMap& p, const LabelMask& y) {
  ImageLoss out;
  if (kind == LossKind::kBce) {
    LossResult r = bce_loss(p, y);
    out.total = r.value;
    out.grad = std::move(r.grad);
  } else {
    LossResult d = dmi_loss(p, y);
    LossResult i = iou_loss(p, y);
    out.dmi = d.value;
    out.iou = i.value;
    out.total = d.value + i.value;
    out.grad = std::move(d.grad);
    for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += i.grad[k];
  }
  return out;
}

}  // namespace

std::vector<LayerSpec> default_architecture() {
  return {
      {1, 8, 3, Activation::kRelu},
      {8, 16, 3, Activation::kRelu},
      {16, 8, 3, Activation::kRelu},
      {8, 1, 1, Activation::kSigmoid},
  };
}

std::size_t param_count(std::span<const LayerSpec> layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

std::size_t ModelParams::layer_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) off += layers[l].param_count();
  return off;
}

ModelParams zero_params(std::vector<LayerSpec> layers) {
  ModelParams p;
  p.values.assign(param_count(layers), 0.0);
  p.layers = std::move(layers);
  return p;
}

ModelParams init_params(std::vector<LayerSpec> layers, std::uint64_t seed) {
  ModelParams p = zero_params(std::move(layers));
  Rng rng(derive_seed(seed, "init_params"));
  std::size_t off = 0;
  for (const auto& spec : p.layers) {
    const double fan_in = static_cast<double>(spec.in_channels) * spec.kernel * spec.kernel;
    const double fan_out = static_cast<double>(spec.out_channels) * spec.kernel * spec.kernel;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (std::size_t i = 0; i < spec.weight_count(); ++i) p.values[off + i] = dist(rng);
    off += spec.param_count();
  }
  return p;
}

ProbabilityMap forward(const ModelParams& params, const Image& image, Padding padding) {
  check_input(image);
  return forward_impl(params, image, padding).output;
}

ForwardCache forward_cached(const ModelParams& params, const Image& image, Padding padding) {
  check_input(image);
  return forward_impl(params, image, padding);
}

std::vector<double> backward(const ModelParams& params, const ForwardCache& cache,
                             const Grid<double>& grad_output) {
  const int h = cache.height, w = cache.width;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  if (grad_output.height() != h || grad_output.width() != w) {
    throw InvalidArgument("backward: gradient shape does not match the forward pass");
  }
  std::vector<double> grad(params.values.size(), 0.0);
  std::vector<double> g(hw);
  for (std::size_t p = 0; p < hw; ++p) {
    const double s = cache.output[p];
    g[p] = grad_output[p] * s * (1.0 - s);
  }
  std::vector<double> gin;
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerSpec& spec = params.layers[l];
    const std::size_t off = params.layer_offset(l);
    const double* weights = params.values.data() + off;
    double* gw = grad.data() + off;
    double* gb = gw + spec.weight_count();
    const bool need_input = l > 0;
    if (need_input) gin.assign(spec.in_channels * hw, 0.0);
    conv_backward(cache.inputs[l].data(), spec, h, w, weights, g.data(), gw, gb,
                  need_input ? gin.data() : nullptr, cache.padding);
    if (!need_input) break;
    // inputs[l] is the activated output of layer l-1.
    const auto& act = cache.inputs[l];
    if (params.layers[l - 1].activation == Activation::kRelu) {
      for (std::size_t p = 0; p < gin.size(); ++p) gin[p] = act[p] > 0.0 ? gin[p] : 0.0;
    } else {
      for (std::size_t p = 0; p < gin.size(); ++p) gin[p] *= act[p] * (1.0 - act[p]);
    }
    g.swap(gin);
  }
  return grad;
}

void sgd_step(std::span<double> params, std::span<const double> gradient, double learning_rate,
              double momentum, std::span<double> velocity, std::size_t epoch) {
  if (params.size() != gradient.size() || params.size() != velocity.size()) {
    throw InvalidArgument("sgd_step: shape mismatch");
  }
  for (double g : gradient) {
    if (!std::isfinite(g)) throw TrainingDiverged("non-finite gradient", epoch);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + gradient[i];
    params[i] -= learning_rate * velocity[i];
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw InvalidArgument("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (threads < 1) throw InvalidArgument("threads must be >= 1");
  if (!(grad_clip >= 0.0)) throw InvalidArgument("grad_clip must be >= 0");
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

EpochStats run_epoch(ModelParams& params, std::vector<double>& velocity,
                     const std::vector<Image>& images, const std::vector<LabelMask>& labels,
                     const TrainConfig& cfg, std::size_t epoch) {
  const std::size_t n = images.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "shuffle", epoch));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::vector<double>> slot_grads(batch);
  std::vector<ImageLoss> slot_losses(batch);
  std::vector<double> grad(params.values.size());
  EpochStats stats;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t len = std::min(batch, n - start);
    parallel_for(len, cfg.threads, [&](std::size_t s) {
      const std::size_t idx = order[start + s];
      ForwardCache cache = forward_cached(params, images[idx]);
      slot_losses[s] = image_loss(cfg.loss, cache.output, labels[idx]);
      slot_grads[s] = backward(params, cache, slot_losses[s].grad);
    });
    // Fixed-order reduction keeps multi-threaded runs bit-identical.
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t s = 0; s < len; ++s) {
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += slot_grads[s][i];
      stats.loss += slot_losses[s].total;
      stats.dmi += slot_losses[s].dmi;
      stats.iou += slot_losses[s].iou;
      if (!std::isfinite(slot_losses[s].total)) {
        throw TrainingDiverged("non-finite training loss", epoch + 1);
      }
    }
    for (auto& g : grad) g /= static_cast<double>(len);
    if (cfg.grad_clip > 0.0) {
      double norm = 0.0;
      for (double g : grad) norm += g * g;
      norm = std::sqrt(norm);
      if (norm > cfg.grad_clip) {
        for (auto& g : grad) g *= cfg.grad_clip / norm;
      }
    }
    sgd_step(params.values, grad, cfg.learning_rate, cfg.momentum, velocity, epoch + 1);
  }
  if (n > 0) {
    stats.loss /= static_cast<double>(n);
    stats.dmi /= static_cast<double>(n);
    stats.iou /= static_cast<double>(n);
  }
  return stats;
}

LabelMask binarize(const ProbabilityMap& p, double threshold) {
  LabelMask out(p.height(), p.width(), 2);
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = p[i] > threshold ? 1 : 0;
  return out;
}

double evaluate_dice(const ModelParams& params, const LabelledSet& eval, double threshold) {
  if (eval.images.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t i = 0; i < eval.images.size(); ++i) {
    sum += dice(binarize(forward(params, eval.images[i]), threshold), eval.labels[i]);
  }
  return sum / static_cast<double>(eval.images.size());
}

TrainResult train_supervised(const LabelledSet& train, const TrainConfig& cfg,
                             const LabelledSet* eval, const ModelParams* initial) {
  cfg.validate();
  if (train.images.empty()) throw InvalidArgument("train_supervised: empty dataset");
  if (train.images.size() != train.labels.size()) {
    throw InvalidArgument("train_supervised: images and labels are not aligned");
  }
  for (std::size_t i = 0; i < train.images.size(); ++i) {
    if (!train.labels[i].same_shape(train.images[i])) {
      throw InvalidArgument("train_supervised: label shape differs from image " + std::to_string(i));
    }
  }
  TrainResult result;
  result.params = initial ? *initial
                          : init_params(default_architecture(), derive_seed(cfg.seed, "model"));
  std::vector<double> velocity(result.params.values.size(), 0.0);
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const EpochStats stats =
        run_epoch(result.params, velocity, train.images, train.labels, cfg, static_cast<std::size_t>(e));
    if (!std::isfinite(stats.loss)) {
      throw TrainingDiverged("non-finite training loss", static_cast<std::size_t>(e) + 1);
    }
    result.history.train_loss.push_back(stats.loss);
    result.history.test_dice.push_back(eval ? evaluate_dice(result.params, *eval)
                                            : std::numeric_limits<double>::quiet_NaN());
    result.history.wall_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return result;
}

double gradient_check(GradientCheckLoss loss, std::uint64_t seed, int n_params) {
  constexpr int kSide = 8;
  constexpr double kStep = 1e-5;
  Rng rng(derive_seed(seed, "gradient_check"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ModelParams params = init_params(default_architecture(), derive_seed(seed, "gradient_check/init"));
  // Non-zero biases so every code path carries gradient.
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const std::size_t off = params.layer_offset(l) + params.layers[l].weight_count();
    for (int o = 0; o < params.layers[l].out_channels; ++o) params.values[off + o] = 0.2 * (unit(rng) - 0.5);
  }
  Image image(kSide, kSide);
  for (auto& v : image.values()) v = unit(rng);
  LabelMask label(kSide, kSide, 2);
  for (std::size_t i = 0; i < label.size(); ++i) label[i] = unit(rng) < 0.4 ? 1 : 0;

  const auto loss_of = [&](const ProbabilityMap& p) -> LossResult {
    switch (loss) {
      case GradientCheckLoss::kBce: return bce_loss(p, label);
      case GradientCheckLoss::kDmi: return dmi_loss(p, label);
      case GradientCheckLoss::kIou: return iou_loss(p, label);
    }
    return {};
  };

  const ForwardCache cache = forward_impl(params, image, Padding::kZero);
  const std::vector<double> analytic = backward(params, cache, loss_of(cache.output).grad);

  std::vector<std::size_t> picks(params.values.size());
  std::iota(picks.begin(), picks.end(), 0);
  std::shuffle(picks.begin(), picks.end(), rng);
  picks.resize(std::min<std::size_t>(picks.size(), static_cast<std::size_t>(n_params)));

  double worst = 0.0;
  for (std::size_t idx : picks) {
    const double saved = params.values[idx];
    params.values[idx] = saved + kStep;
    const double up = loss_of(forward_impl(params, image, Padding::kZero).output).value;
    params.values[idx] = saved - kStep;
    const double down = loss_of(forward_impl(params, image, Padding::kZero).output).value;
    params.values[idx] = saved;
    const double numeric = (up - down) / (2.0 * kStep);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[idx]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[idx]) / scale);
  }
  return worst;
}

void write_history_csv(const std::string& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "epoch,train_loss,test_dice\r\n";
  char buf[128];
  for (std::size_t e = 0; e < history.train_loss.size(); ++e) {
    const double d = e < history.test_dice.size() ? history.test_dice[e]
                                                  : std::numeric_limits<double>::quiet_NaN();
    if (std::isnan(d)) {
      std::snprintf(buf, sizeof buf, "%zu,%.10g,", e + 1, history.train_loss[e]);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g", e + 1, history.train_loss[e], d);
    }
    out << buf << "\r\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace metastruct
