#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "metastruct/error.hpp"

namespace metastruct {

/// Dense row-major H x W array.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width) {
    if (height < 0 || width < 0) throw InvalidArgument("grid dimensions must be non-negative");
    data_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int y, int x) noexcept { return data_[index(y, x)]; }
  const T& operator()(int y, int x) const noexcept { return data_[index(y, x)]; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool in_bounds(int y, int x) const noexcept {
    return y >= 0 && y < height_ && x >= 0 && x < width_;
  }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t index(int y, int x) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Grayscale image with intensities in [0,1].
using Image = Grid<double>;

/// Per-pixel foreground probability (network output).
using ProbabilityMap = Grid<double>;

}  // namespace metastruct
