#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "metastruct/grid.hpp"
#include "metastruct/label_mask.hpp"

namespace metastruct {

struct SyntheticSample {
  Image image;
  LabelMask mask;
  std::string generator;
  std::uint64_t seed = 0;
};

/// Rendering constants shared by the microscopy-like generators.
struct RenderParams {
  double blur_sigma = 1.5;
  double noise_sigma = 0.08;
  double background = 0.1;
  // Per-object brightness above background, drawn uniformly.
  double min_amplitude = 0.5;
  double max_amplitude = 0.9;
};

/// ER-like filaments: random-walk polylines of width 2-4 px.
SyntheticSample gen_curvilinear(int height, int width, int n_filaments, std::uint64_t seed);

/// MITO/NUC-like blobs: union of random ellipses with semi-axes in [4, 12] px.
SyntheticSample gen_blobs(int height, int width, int n_blobs, std::uint64_t seed);

/// side x side binary mask: a centred disk (class 1) inside a rectangle (class 0).
LabelMask gen_circle_rectangle(int side);

/// Voronoi partition into `n_classes` contiguous regions, each >= 2% of pixels.
SyntheticSample gen_multiclass(int height, int width, int n_classes, std::uint64_t seed);

RenderParams curvilinear_render_params();
RenderParams blob_render_params();

/// Writes `<stem>_img.pgm` and `<stem>_mask.pgm` into `dir`.
void write_sample(const std::filesystem::path& dir, const std::string& stem,
                  const SyntheticSample& sample);

}  // namespace metastruct
