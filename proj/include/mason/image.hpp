#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mason/tensor.hpp"

namespace mason {

// ---------------------------------------------------------------------------
// Joint geometric transforms. Images are (C, H, W); masks are (H, W).
// ---------------------------------------------------------------------------

enum class FlipAxis { none, horizontal, vertical };

/// 90-degree multiples, counter-clockwise.
enum class Rot90 { none, r90, r180, r270 };

namespace detail {

inline void transform_index(std::size_t h, std::size_t w, std::size_t H,
                            std::size_t W, FlipAxis flip, Rot90 rot,
                            std::size_t& oh, std::size_t& ow, std::size_t& OH,
                            std::size_t& OW) {
  std::size_t fh = h, fw = w;
  if (flip == FlipAxis::horizontal) fw = W - 1 - w;
  if (flip == FlipAxis::vertical) fh = H - 1 - h;
  switch (rot) {
    case Rot90::none: oh = fh; ow = fw; OH = H; OW = W; break;
    case Rot90::r90: oh = W - 1 - fw; ow = fh; OH = W; OW = H; break;
    case Rot90::r180: oh = H - 1 - fh; ow = W - 1 - fw; OH = H; OW = W; break;
    case Rot90::r270: oh = fw; ow = H - 1 - fh; OH = W; OW = H; break;
  }
}

}  // namespace detail

template <typename T>
Tensor<T> transform_image(const Tensor<T>& img, FlipAxis flip, Rot90 rot) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::size_t oh = 0, ow = 0, OH = H, OW = W;
  detail::transform_index(0, 0, H, W, flip, rot, oh, ow, OH, OW);
  Tensor<T> out({C, OH, OW});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        detail::transform_index(h, w, H, W, flip, rot, oh, ow, OH, OW);
        out.at(c, oh, ow) = img.at(c, h, w);
      }
  return out;
}

template <typename T>
Tensor<T> transform_mask(const Tensor<T>& mask, FlipAxis flip, Rot90 rot) {
  const std::size_t H = mask.dim(0), W = mask.dim(1);
  std::size_t oh = 0, ow = 0, OH = H, OW = W;
  detail::transform_index(0, 0, H, W, flip, rot, oh, ow, OH, OW);
  Tensor<T> out({OH, OW});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      detail::transform_index(h, w, H, W, flip, rot, oh, ow, OH, OW);
      out.at(oh, ow) = mask.at(h, w);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear resampling with half-pixel centers. The plan is a sparse linear
// map, so the adjoint used for backprop is exact.
// ---------------------------------------------------------------------------

struct BilinearTap {
  std::size_t src;
  float weight;
};

struct BilinearPlan {
  std::size_t src_h = 0, src_w = 0, dst_h = 0, dst_w = 0;
  // 4 taps per destination pixel, flattened.
  std::vector<BilinearTap> taps;
};

inline BilinearPlan make_bilinear_plan(std::size_t src_h, std::size_t src_w,
                                       std::size_t dst_h, std::size_t dst_w) {
  BilinearPlan plan;
  plan.src_h = src_h;
  plan.src_w = src_w;
  plan.dst_h = dst_h;
  plan.dst_w = dst_w;
  plan.taps.resize(dst_h * dst_w * 4);
  const double sh = double(src_h) / double(dst_h);
  const double sw = double(src_w) / double(dst_w);
  for (std::size_t y = 0; y < dst_h; ++y) {
    double fy = (double(y) + 0.5) * sh - 0.5;
    fy = std::min(std::max(fy, 0.0), double(src_h - 1));
    const std::size_t y0 = std::size_t(std::floor(fy));
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    const float wy = float(fy - double(y0));
    for (std::size_t x = 0; x < dst_w; ++x) {
      double fx = (double(x) + 0.5) * sw - 0.5;
      fx = std::min(std::max(fx, 0.0), double(src_w - 1));
      const std::size_t x0 = std::size_t(std::floor(fx));
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const float wx = float(fx - double(x0));
      BilinearTap* t = &plan.taps[(y * dst_w + x) * 4];
      t[0] = {y0 * src_w + x0, (1.f - wy) * (1.f - wx)};
      t[1] = {y0 * src_w + x1, (1.f - wy) * wx};
      t[2] = {y1 * src_w + x0, wy * (1.f - wx)};
      t[3] = {y1 * src_w + x1, wy * wx};
    }
  }
  return plan;
}

/// One channel plane: dst[i] = sum_taps w * src[tap].
template <typename T>
void bilinear_apply(const BilinearPlan& plan, const T* src, T* dst) {
  const std::size_t n = plan.dst_h * plan.dst_w;
  for (std::size_t i = 0; i < n; ++i) {
    const BilinearTap* t = &plan.taps[i * 4];
    dst[i] = T(t[0].weight) * src[t[0].src] + T(t[1].weight) * src[t[1].src] +
             T(t[2].weight) * src[t[2].src] + T(t[3].weight) * src[t[3].src];
  }
}

/// Adjoint: scatter destination gradients back onto the source grid.
template <typename T>
void bilinear_apply_adjoint(const BilinearPlan& plan, const T* dst_grad,
                            T* src_grad) {
  const std::size_t n = plan.dst_h * plan.dst_w;
  for (std::size_t i = 0; i < n; ++i) {
    const BilinearTap* t = &plan.taps[i * 4];
    for (int k = 0; k < 4; ++k) src_grad[t[k].src] += T(t[k].weight) * dst_grad[i];
  }
}

/// Resize a (C, H, W) tensor.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& img, std::size_t dst_h,
                          std::size_t dst_w) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  BilinearPlan plan = make_bilinear_plan(H, W, dst_h, dst_w);
  Tensor<T> out({C, dst_h, dst_w});
  for (std::size_t c = 0; c < C; ++c)
    bilinear_apply(plan, img.data() + c * H * W, out.data() + c * dst_h * dst_w);
  return out;
}

// ---------------------------------------------------------------------------
// Binary-mask downscale rule shared by changegen and analysis: each coarse
// cell takes the area average of the fine-mask values over its footprint and
// is re-binarized at 0.5 (strictly greater). Fractional footprints are
// weighted by overlap, so non-integer scale factors are handled too.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<float> box_downscale(const Tensor<T>& fine, std::size_t dst_h,
                            std::size_t dst_w) {
  const std::size_t H = fine.dim(0), W = fine.dim(1);
  if (H % dst_h == 0 && W % dst_w == 0) {
    // integer factors: plain block averages
    const std::size_t fy = H / dst_h, fx = W / dst_w;
    Tensor<float> out({dst_h, dst_w});
    for (std::size_t y = 0; y < dst_h; ++y)
      for (std::size_t x = 0; x < dst_w; ++x) {
        double acc = 0;
        for (std::size_t h = y * fy; h < (y + 1) * fy; ++h)
          for (std::size_t w = x * fx; w < (x + 1) * fx; ++w)
            acc += double(fine.at(h, w));
        out.at(y, x) = float(acc / double(fy * fx));
      }
    return out;
  }
  const double sy = double(H) / double(dst_h);
  const double sx = double(W) / double(dst_w);
  Tensor<float> out({dst_h, dst_w});
  for (std::size_t y = 0; y < dst_h; ++y) {
    const double y_lo = y * sy, y_hi = (y + 1) * sy;
    for (std::size_t x = 0; x < dst_w; ++x) {
      const double x_lo = x * sx, x_hi = (x + 1) * sx;
      double acc = 0.0;
      for (std::size_t h = std::size_t(std::floor(y_lo)); h < std::size_t(std::ceil(y_hi)); ++h) {
        const double wy = std::min(y_hi, double(h + 1)) - std::max(y_lo, double(h));
        if (wy <= 0) continue;
        for (std::size_t w = std::size_t(std::floor(x_lo)); w < std::size_t(std::ceil(x_hi)); ++w) {
          const double wx = std::min(x_hi, double(w + 1)) - std::max(x_lo, double(w));
          if (wx <= 0) continue;
          acc += wy * wx * double(fine.at(h, w));
        }
      }
      out.at(y, x) = float(acc / (sy * sx));
    }
  }
  return out;
}

/// The single source of truth for mapping an image-resolution binary mask to
/// a feature-resolution binary mask.
template <typename T>
MaskU8 downscale_binary_mask(const Tensor<T>& mask, std::size_t dst_h,
                             std::size_t dst_w) {
  Tensor<float> avg = box_downscale(mask, dst_h, dst_w);
  MaskU8 out({dst_h, dst_w});
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = avg[i] > 0.5f ? 1 : 0;
  return out;
}

}  // namespace mason
