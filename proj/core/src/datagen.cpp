#include "metastruct/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "filters.hpp"
#include "metastruct/pgm.hpp"
#include "metastruct/rng.hpp"

namespace metastruct {
namespace {

constexpr int kMinSide = 32;
constexpr int kMaxAttempts = 100;
constexpr double kMinForeground = 0.05;
constexpr double kMaxForeground = 0.6;
constexpr double kMinContrast = 0.2;

void check_dims(int height, int width) {
  if (height < kMinSide || width < kMinSide) {
    throw InvalidArgument("generator dimensions must be at least 32x32, got " +
                          std::to_string(height) + "x" + std::to_string(width));
  }
}

// Blur the brightness map, add background and sensor noise, clip to [0, 1].
Image render(const Grid<double>& brightness, const RenderParams& rp, Rng& rng) {
  Image image = detail::gaussian_blur(brightness, rp.blur_sigma);
  std::normal_distribution<double> noise(0.0, rp.noise_sigma);
  for (auto& v : image.values()) v = std::clamp(rp.background + v + noise(rng), 0.0, 1.0);
  return image;
}

double contrast(const Image& image, const LabelMask& mask) {
  double fg = 0.0, bg = 0.0;
  std::size_t nfg = 0, nbg = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) {
      fg += image[i];
      ++nfg;
    } else {
      bg += image[i];
      ++nbg;
    }
  }
  if (nfg == 0 || nbg == 0) return 0.0;
  return fg / static_cast<double>(nfg) - bg / static_cast<double>(nbg);
}

bool acceptable(const Image& image, const LabelMask& mask) {
  const double f = mask.foreground_fraction();
  return f >= kMinForeground && f <= kMaxForeground && contrast(image, mask) >= kMinContrast;
}

void stamp_disk(LabelMask& mask, Grid<double>& brightness, double cx, double cy, double radius,
                double amplitude) {
  const int x0 = static_cast<int>(std::floor(cx - radius));
  const int x1 = static_cast<int>(std::ceil(cx + radius));
  const int y0 = static_cast<int>(std::floor(cy - radius));
  const int y1 = static_cast<int>(std::ceil(cy + radius));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (!mask.grid().in_bounds(y, x)) continue;
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= radius * radius) {
        mask(y, x) = 1;
        brightness(y, x) = std::max(brightness(y, x), amplitude);
      }
    }
  }
}

}  // namespace

RenderParams curvilinear_render_params() { return RenderParams{}; }

RenderParams blob_render_params() {
  RenderParams rp;
  rp.min_amplitude = 0.3;
  rp.max_amplitude = 0.8;
  return rp;
}

SyntheticSample gen_curvilinear(int height, int width, int n_filaments, std::uint64_t seed) {
  check_dims(height, width);
  if (n_filaments < 1) throw InvalidArgument("n_filaments must be >= 1");
  const RenderParams rp = curvilinear_render_params();
  Rng rng(derive_seed(seed, "gen_curvilinear"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> turn(-0.3, 0.3);
  const int steps = static_cast<int>(std::lround(0.75 * (height + width)));

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    LabelMask mask(height, width, 2);
    Grid<double> brightness(height, width, 0.0);
    for (int f = 0; f < n_filaments; ++f) {
      const double amplitude = rp.min_amplitude + (rp.max_amplitude - rp.min_amplitude) * unit(rng);
      const double half_width = 1.0 + unit(rng);  // full width in [2, 4]
      double x = unit(rng) * (width - 1);
      double y = unit(rng) * (height - 1);
      double heading = 2.0 * std::numbers::pi * unit(rng);
      for (int s = 0; s < steps; ++s) {
        stamp_disk(mask, brightness, x, y, half_width, amplitude);
        heading += turn(rng);
        double nx = x + std::cos(heading);
        double ny = y + std::sin(heading);
        // Reflect off the image border.
        if (nx < 0.0 || nx > width - 1) {
          heading = std::numbers::pi - heading;
          nx = x + std::cos(heading);
        }
        if (ny < 0.0 || ny > height - 1) {
          heading = -heading;
          ny = y + std::sin(heading);
        }
        x = std::clamp(nx, 0.0, width - 1.0);
        y = std::clamp(ny, 0.0, height - 1.0);
      }
    }
    Image image = render(brightness, rp, rng);
    if (acceptable(image, mask)) {
      return SyntheticSample{std::move(image), std::move(mask), "curvilinear", seed};
    }
  }
  throw GenerationFailure("gen_curvilinear: no acceptable sample after 100 attempts");
}

SyntheticSample gen_blobs(int height, int width, int n_blobs, std::uint64_t seed) {
  check_dims(height, width);
  if (n_blobs < 1) throw InvalidArgument("n_blobs must be >= 1");
  const RenderParams rp = blob_render_params();
  Rng rng(derive_seed(seed, "gen_blobs"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    LabelMask mask(height, width, 2);
    Grid<double> brightness(height, width, 0.0);
    for (int b = 0; b < n_blobs; ++b) {
      const double amplitude = rp.min_amplitude + (rp.max_amplitude - rp.min_amplitude) * unit(rng);
      const double cx = unit(rng) * (width - 1);
      const double cy = unit(rng) * (height - 1);
      const double a = 4.0 + 8.0 * unit(rng);
      const double bb = 4.0 + 8.0 * unit(rng);
      const double angle = std::numbers::pi * unit(rng);
      const double c = std::cos(angle), s = std::sin(angle);
      const double reach = std::max(a, bb);
      for (int y = static_cast<int>(std::floor(cy - reach)); y <= static_cast<int>(std::ceil(cy + reach)); ++y) {
        for (int x = static_cast<int>(std::floor(cx - reach)); x <= static_cast<int>(std::ceil(cx + reach)); ++x) {
          if (!mask.grid().in_bounds(y, x)) continue;
          const double dx = x - cx, dy = y - cy;
          const double u = (dx * c + dy * s) / a;
          const double v = (-dx * s + dy * c) / bb;
          if (u * u + v * v <= 1.0) {
            mask(y, x) = 1;
            brightness(y, x) = std::max(brightness(y, x), amplitude);
          }
        }
      }
    }
    Image image = render(brightness, rp, rng);
    if (acceptable(image, mask)) {
      return SyntheticSample{std::move(image), std::move(mask), "blobs", seed};
    }
  }
  throw GenerationFailure("gen_blobs: no acceptable sample after 100 attempts");
}

LabelMask gen_circle_rectangle(int side) {
  if (side < 64) throw InvalidArgument("gen_circle_rectangle: side must be >= 64");
  LabelMask mask(side, side, 2);
  const double centre = (side - 1) / 2.0;
  const double radius = 0.375 * side;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double dx = x - centre, dy = y - centre;
      mask(y, x) = (dx * dx + dy * dy <= radius * radius) ? 1 : 0;
    }
  }
  return mask;
}

SyntheticSample gen_multiclass(int height, int width, int n_classes, std::uint64_t seed) {
  check_dims(height, width);
  if (n_classes < 3 || n_classes > LabelMask::kMaxClasses) {
    throw InvalidArgument("gen_multiclass: n_classes must be in [3, 8]");
  }
  RenderParams rp;
  Rng rng(derive_seed(seed, "gen_multiclass"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double min_count = 0.02 * height * width;

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<double> sx(n_classes), sy(n_classes);
    for (int c = 0; c < n_classes; ++c) {
      sx[c] = unit(rng) * (width - 1);
      sy[c] = unit(rng) * (height - 1);
    }
    LabelMask mask(height, width, n_classes);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        int best = 0;
        double best_d = 1e300;
        for (int c = 0; c < n_classes; ++c) {
          const double d = (x - sx[c]) * (x - sx[c]) + (y - sy[c]) * (y - sy[c]);
          if (d < best_d) {
            best_d = d;
            best = c;
          }
        }
        mask(y, x) = static_cast<std::uint8_t>(best);
      }
    }
    bool starved = false;
    for (int c = 0; c < n_classes; ++c) {
      if (static_cast<double>(mask.count(static_cast<std::uint8_t>(c))) < min_count) starved = true;
    }
    if (starved) continue;
    Grid<double> brightness(height, width);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      brightness[i] = 0.8 * mask[i] / static_cast<double>(n_classes - 1);
    }
    Image image = render(brightness, rp, rng);
    return SyntheticSample{std::move(image), std::move(mask), "multiclass", seed};
  }
  throw GenerationFailure("gen_multiclass: region starvation after 100 resamples");
}

void write_sample(const std::filesystem::path& dir, const std::string& stem,
                  const SyntheticSample& sample) {
  write_image_pgm(dir / (stem + "_img.pgm"), sample.image);
  write_mask_pgm(dir / (stem + "_mask.pgm"), sample.mask);
}

}  // namespace metastruct
