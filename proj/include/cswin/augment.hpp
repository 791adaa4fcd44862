#pragma once

#include <cstddef>
#include <cstdint>

#include "cswin/errors.hpp"
#include "cswin/mask.hpp"
#include "cswin/random.hpp"
#include "cswin/tensor.hpp"

namespace cswin {

enum class Transform : std::uint8_t { identity, flip_horizontal, flip_vertical, rotate90, rotate180, rotate270 };

inline constexpr std::size_t kNumTransforms = 6;

namespace detail {

// Source coordinate of destination pixel (i, j) for an h x w map (square for rotations).
inline void transform_source(Transform t, std::size_t i, std::size_t j, std::size_t h, std::size_t w,
                             std::size_t& si, std::size_t& sj) {
  switch (t) {
    case Transform::identity: si = i; sj = j; break;
    case Transform::flip_horizontal: si = i; sj = w - 1 - j; break;
    case Transform::flip_vertical: si = h - 1 - i; sj = j; break;
    case Transform::rotate90: si = j; sj = w - 1 - i; break;   // counter-clockwise
    case Transform::rotate180: si = h - 1 - i; sj = w - 1 - j; break;
    case Transform::rotate270: si = h - 1 - j; sj = i; break;
  }
}

inline bool is_rotation(Transform t) {
  return t == Transform::rotate90 || t == Transform::rotate270;
}

}  // namespace detail

template <class T>
Tensor<T> apply_transform(const Tensor<T>& image, Transform t) {
  if (image.rank() != 3) throw DimensionError("apply_transform: expected (H,W,C)");
  const std::size_t h = image.size(0), w = image.size(1), c = image.size(2);
  if (detail::is_rotation(t) && h != w) throw ConfigError("90-degree rotation needs a square image");
  Tensor<T> out(image.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      std::size_t si = 0, sj = 0;
      detail::transform_source(t, i, j, h, w, si, sj);
      for (std::size_t k = 0; k < c; ++k) out[(i * w + j) * c + k] = image[(si * w + sj) * c + k];
    }
  return out;
}

inline Mask apply_transform(const Mask& m, Transform t) {
  if (detail::is_rotation(t) && m.height != m.width) throw ConfigError("90-degree rotation needs a square mask");
  Mask out(m.height, m.width);
  for (std::size_t i = 0; i < m.height; ++i)
    for (std::size_t j = 0; j < m.width; ++j) {
      std::size_t si = 0, sj = 0;
      detail::transform_source(t, i, j, m.height, m.width, si, sj);
      out(i, j) = m(si, sj);
    }
  return out;
}

inline Transform random_transform(Rng& rng) { return static_cast<Transform>(rng.below(kNumTransforms)); }

template <class T>
struct AugmentedPair {
  Tensor<T> image;
  Mask mask;
  Transform transform;
};

/// Draws one of {identity, h-flip, v-flip, rot 90/180/270} and applies it to image and mask alike.
template <class T>
AugmentedPair<T> augment(const Tensor<T>& image, const Mask& mask, Rng& rng) {
  if (image.rank() != 3 || image.size(0) != mask.height || image.size(1) != mask.width) {
    throw DimensionError("augment: image and mask extents differ");
  }
  if (mask.height != mask.width) throw ConfigError("augment: rotations need square samples");
  const Transform t = random_transform(rng);
  return {apply_transform(image, t), apply_transform(mask, t), t};
}

}  // namespace cswin
