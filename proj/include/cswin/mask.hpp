#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cswin/errors.hpp"

namespace cswin {

/// Integer class-id map, row-major (height x width).
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}
  Mask(std::size_t h, std::size_t w, std::vector<std::uint8_t> values) : height(h), width(w), labels(std::move(values)) {
    if (labels.size() != h * w) throw DimensionError("mask: value count does not match extents");
  }

  std::size_t size() const { return labels.size(); }
  std::uint8_t& operator()(std::size_t i, std::size_t j) { return labels[i * width + j]; }
  std::uint8_t operator()(std::size_t i, std::size_t j) const { return labels[i * width + j]; }
  bool operator==(const Mask&) const = default;
};

inline void require_same_extent(const Mask& a, const Mask& b, const char* op) {
  if (a.height != b.height || a.width != b.width) {
    throw ContractError(std::string(op) + ": mask extents " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                        " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

}  // namespace cswin
