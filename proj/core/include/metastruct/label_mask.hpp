#pragma once

#include <cstddef>
#include <cstdint>

#include "metastruct/grid.hpp"

namespace metastruct {

/// H x W class map over `n_classes` classes. The value `n_classes` is reserved
/// as the ignore marker for pixels excluded from training and evaluation.
class LabelMask {
 public:
  static constexpr int kMaxClasses = 8;

  LabelMask() = default;
  LabelMask(int height, int width, int n_classes = 2, std::uint8_t fill = 0);
  LabelMask(Grid<std::uint8_t> labels, int n_classes);

  int height() const noexcept { return labels_.height(); }
  int width() const noexcept { return labels_.width(); }
  std::size_t size() const noexcept { return labels_.size(); }
  int n_classes() const noexcept { return n_classes_; }
  std::uint8_t ignore_value() const noexcept { return static_cast<std::uint8_t>(n_classes_); }
  bool binary() const noexcept { return n_classes_ == 2; }

  std::uint8_t& operator()(int y, int x) noexcept { return labels_(y, x); }
  std::uint8_t operator()(int y, int x) const noexcept { return labels_(y, x); }
  std::uint8_t& operator[](std::size_t i) noexcept { return labels_[i]; }
  std::uint8_t operator[](std::size_t i) const noexcept { return labels_[i]; }

  bool ignored(std::size_t i) const noexcept { return labels_[i] == ignore_value(); }
  bool has_ignored() const noexcept;
  std::size_t count(std::uint8_t value) const noexcept;
  /// Fraction of non-ignored pixels labelled 1.
  double foreground_fraction() const noexcept;

  const Grid<std::uint8_t>& grid() const noexcept { return labels_; }
  Grid<std::uint8_t>& grid() noexcept { return labels_; }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept { return labels_.same_shape(other); }
  bool same_shape(const LabelMask& other) const noexcept {
    return labels_.same_shape(other.labels_);
  }

  /// Throws InvalidArgument if any entry is neither a class nor the ignore marker.
  void validate() const;

  friend bool operator==(const LabelMask&, const LabelMask&) = default;

 private:
  Grid<std::uint8_t> labels_;
  int n_classes_ = 2;
};

}  // namespace metastruct
