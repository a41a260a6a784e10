#include "metastruct/label_mask.hpp"

#include <string>

namespace metastruct {

LabelMask::LabelMask(int height, int width, int n_classes, std::uint8_t fill)
    : labels_(height, width, fill), n_classes_(n_classes) {
  if (n_classes < 2 || n_classes > kMaxClasses) {
    throw InvalidArgument("n_classes must be in [2, 8], got " + std::to_string(n_classes));
  }
}

LabelMask::LabelMask(Grid<std::uint8_t> labels, int n_classes)
    : labels_(std::move(labels)), n_classes_(n_classes) {
  if (n_classes < 2 || n_classes > kMaxClasses) {
    throw InvalidArgument("n_classes must be in [2, 8], got " + std::to_string(n_classes));
  }
  validate();
}

bool LabelMask::has_ignored() const noexcept {
  for (auto v : labels_.values()) {
    if (v == ignore_value()) return true;
  }
  return false;
}

std::size_t LabelMask::count(std::uint8_t value) const noexcept {
  std::size_t n = 0;
  for (auto v : labels_.values()) n += (v == value);
  return n;
}

double LabelMask::foreground_fraction() const noexcept {
  std::size_t valid = 0, fg = 0;
  for (auto v : labels_.values()) {
    if (v == ignore_value()) continue;
    ++valid;
    fg += (v == 1);
  }
  return valid == 0 ? 0.0 : static_cast<double>(fg) / static_cast<double>(valid);
}

void LabelMask::validate() const {
  for (auto v : labels_.values()) {
    if (v > ignore_value()) {
      throw InvalidArgument("label value " + std::to_string(v) + " outside [0, " +
                            std::to_string(n_classes_) + "]");
    }
  }
}

}  // namespace metastruct
