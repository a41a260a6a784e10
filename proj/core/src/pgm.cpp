#include "metastruct/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

namespace metastruct {
namespace {

// Reads one header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Grid<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << pixels.width() << ' ' << pixels.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Grid<std::uint8_t> read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  if (next_token(in) != "P5") throw IoError(path.string() + ": not a binary PGM (P5)");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError(path.string() + ": unsupported PGM geometry or depth");
  }
  Grid<std::uint8_t> pixels(height, width);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(pixels.size())) {
    throw IoError(path.string() + ": truncated pixel data");
  }
  return pixels;
}

void write_image_pgm(const std::filesystem::path& path, const Image& image) {
  Grid<std::uint8_t> pixels(image.height(), image.width());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  write_pgm(path, pixels);
}

Image read_image_pgm(const std::filesystem::path& path) {
  const auto pixels = read_pgm(path);
  Image image(pixels.height(), pixels.width());
  for (std::size_t i = 0; i < pixels.size(); ++i) image[i] = pixels[i] / 255.0;
  return image;
}

void write_mask_pgm(const std::filesystem::path& path, const LabelMask& mask) {
  Grid<std::uint8_t> pixels(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    pixels[i] = mask.ignored(i) ? kPgmIgnoreValue : mask[i];
  }
  write_pgm(path, pixels);
}

LabelMask read_mask_pgm(const std::filesystem::path& path, int n_classes) {
  auto pixels = read_pgm(path);
  if (n_classes <= 0) {
    int top = 0;
    for (auto v : pixels.values()) {
      if (v != kPgmIgnoreValue) top = std::max<int>(top, v);
    }
    n_classes = std::max(2, top + 1);
  }
  if (n_classes > LabelMask::kMaxClasses) {
    throw IoError(path.string() + ": mask has more than 8 classes");
  }
  for (auto& v : pixels.values()) {
    if (v == kPgmIgnoreValue) {
      v = static_cast<std::uint8_t>(n_classes);
    } else if (v >= n_classes) {
      throw IoError(path.string() + ": label " + std::to_string(v) + " exceeds class count");
    }
  }
  return LabelMask(std::move(pixels), n_classes);
}

}  // namespace metastruct
