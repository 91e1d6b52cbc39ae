#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mhunet/errors.hpp"

namespace mhunet {

/// Binary segmentation mask, row-major; 0 = background, 1 = foreground.
struct SegMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  SegMask() = default;
  SegMask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}
  SegMask(std::size_t h, std::size_t w, std::vector<std::uint8_t> values)
      : height(h), width(w), labels(std::move(values)) {
    if (labels.size() != h * w)
      throw DimensionError("SegMask: " + std::to_string(labels.size()) + " labels for " + std::to_string(h) +
                           "x" + std::to_string(w));
    for (auto v : labels)
      if (v > 1) throw ContractError("SegMask: labels must be 0 or 1");
  }

  std::size_t size() const noexcept { return labels.size(); }
  std::uint8_t at(std::size_t i, std::size_t j) const { return labels[i * width + j]; }
  std::uint8_t& at(std::size_t i, std::size_t j) { return labels[i * width + j]; }
  std::size_t foreground() const noexcept {
    std::size_t n = 0;
    for (auto v : labels) n += v;
    return n;
  }

  friend bool operator==(const SegMask&, const SegMask&) = default;
};

}  // namespace mhunet
