#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "mason/rng.hpp"
#include "mason/tensor.hpp"

namespace mason {

/// Single-octave gradient-lattice Perlin field, min-max rescaled to [0, 1].
/// `cell` is the lattice spacing in pixels.
inline Tensor<float> perlin_field(std::size_t height, std::size_t width,
                                  std::size_t cell, RngStream& rng) {
  require(height > 0 && width > 0 && cell > 0, ErrorClass::invalid_argument,
          "perlin_field: dimensions must be positive");
  const std::size_t gy = height / cell + 2;
  const std::size_t gx = width / cell + 2;
  std::vector<float> grad(gy * gx * 2);
  for (std::size_t i = 0; i < gy * gx; ++i) {
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    grad[i * 2] = float(std::cos(a));
    grad[i * 2 + 1] = float(std::sin(a));
  }

  auto fade = [](float t) { return t * t * t * (t * (t * 6 - 15) + 10); };
  auto dot_at = [&](std::size_t cy, std::size_t cx, float dy, float dx) {
    const float* g = &grad[(cy * gx + cx) * 2];
    return g[0] * dy + g[1] * dx;
  };

  Tensor<float> field({height, width});
  float lo = std::numeric_limits<float>::max();
  float hi = std::numeric_limits<float>::lowest();
  for (std::size_t y = 0; y < height; ++y) {
    const float fy = float(y) / float(cell);
    const std::size_t cy = std::size_t(fy);
    const float dy = fy - float(cy);
    const float uy = fade(dy);
    for (std::size_t x = 0; x < width; ++x) {
      const float fx = float(x) / float(cell);
      const std::size_t cx = std::size_t(fx);
      const float dx = fx - float(cx);
      const float ux = fade(dx);
      const float n00 = dot_at(cy, cx, dy, dx);
      const float n01 = dot_at(cy, cx + 1, dy, dx - 1);
      const float n10 = dot_at(cy + 1, cx, dy - 1, dx);
      const float n11 = dot_at(cy + 1, cx + 1, dy - 1, dx - 1);
      const float v = (n00 * (1 - ux) + n01 * ux) * (1 - uy) +
                      (n10 * (1 - ux) + n11 * ux) * uy;
      field.at(y, x) = v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }

  const float range = hi - lo;
  if (range > 0) {
    for (auto& v : field.vec()) v = (v - lo) / range;
  } else {
    field.fill(0.5f);
  }
  return field;
}

/// Image-resolution Perlin change mask: field >= threshold, so threshold 0
/// selects everything and anything above 1 selects nothing.
inline MaskU8 perlin_mask(std::size_t height, std::size_t width,
                          std::size_t cell, float threshold, RngStream& rng) {
  Tensor<float> field = perlin_field(height, width, cell, rng);
  MaskU8 mask({height, width});
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = field[i] >= threshold ? 1 : 0;
  return mask;
}

struct MaskRect {
  std::size_t y0, x0, y1, x1;  // half-open
};

struct RectangleMask {
  MaskU8 mask;
  std::vector<MaskRect> rects;
};

/// Union of 1-3 axis-aligned random rectangles. `min_side` keeps every
/// rectangle at least one cell wide at the coarsest feature resolution.
inline RectangleMask rectangle_mask(std::size_t height, std::size_t width,
                                    std::size_t min_side, RngStream& rng) {
  min_side = std::max<std::size_t>(1, std::min({min_side, height, width}));
  RectangleMask out;
  out.mask = MaskU8({height, width});
  const std::size_t count = 1 + rng.below(3);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t sh = min_side + rng.below(height - min_side + 1);
    const std::size_t sw = min_side + rng.below(width - min_side + 1);
    const std::size_t y0 = rng.below(height - sh + 1);
    const std::size_t x0 = rng.below(width - sw + 1);
    out.rects.push_back({y0, x0, y0 + sh, x0 + sw});
    for (std::size_t y = y0; y < y0 + sh; ++y)
      for (std::size_t x = x0; x < x0 + sw; ++x) out.mask.at(y, x) = 1;
  }
  return out;
}

}  // namespace mason
