#pragma once

#include <cstdint>
#include <filesystem>

#include "metastruct/grid.hpp"
#include "metastruct/label_mask.hpp"

namespace metastruct {

/// Binary 8-bit PGM (P5) read/write.
void write_pgm(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels);
Grid<std::uint8_t> read_pgm(const std::filesystem::path& path);

// Intensities in [0,1] are quantised to round(255 v).
void write_image_pgm(const std::filesystem::path& path, const Image& image);
Image read_image_pgm(const std::filesystem::path& path);

// Class i is stored as gray value i; ignored pixels as 255.
void write_mask_pgm(const std::filesystem::path& path, const LabelMask& mask);
/// `n_classes` <= 0 infers max(2, largest value + 1) from the file.
LabelMask read_mask_pgm(const std::filesystem::path& path, int n_classes = 0);

constexpr std::uint8_t kPgmIgnoreValue = 255;

}  // namespace metastruct
