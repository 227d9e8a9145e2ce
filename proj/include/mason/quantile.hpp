#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cmath>
#include <span>

#ifdef _OPENMP
#include <omp.h>
#endif
#include <vector>

#include "mason/common.hpp"
#include "mason/tensor.hpp"

namespace mason {

/// How noise-scale statistics are grouped before taking the quantile.
enum class SamplingDim {
  per_channel_in_batch,   // one scale per channel, over all samples and pixels
  per_channel_in_sample,  // one scale per (sample, channel)
  per_sample,             // one scale per sample
  per_batch,              // one scale for everything
};

template <typename T>
struct QuantileResult {
  T value;
  T dvalue_dq;  // d quantile / d q, values treated as constants
};

namespace detail {

/// Bracketing order statistics around rank (n-1)*q without a full sort.
/// Two selections keep this O(n).
template <typename T>
void order_stats_pair(std::vector<T>& scratch, std::size_t k, T& vk, T& vk1) {
  std::nth_element(scratch.begin(), scratch.begin() + k, scratch.end());
  vk = scratch[k];
  if (k + 1 < scratch.size()) {
    vk1 = *std::min_element(scratch.begin() + k + 1, scratch.end());
  } else {
    vk1 = vk;
  }
}

}  // namespace detail

/// Linear-interpolation quantile on the sorted values: with h = (n-1)*q,
/// k = floor(h), the result is v[k] + (h-k)*(v[k+1]-v[k]). Piecewise linear
/// in q, and its a.e. derivative is (n-1)*(v[k+1]-v[k]).
template <typename T>
QuantileResult<T> quantile_with_grad(std::span<const T> values, T q) {
  require(!values.empty(), ErrorClass::invalid_argument, "quantile of empty sequence");
  require(q >= T(0) && q <= T(1), ErrorClass::invalid_argument, "quantile q outside [0,1]");
  for (const T& v : values)
    require(std::isfinite(double(v)), ErrorClass::numeric_failure,
            "quantile input contains non-finite values");
  const std::size_t n = values.size();
  if (n == 1) return {values[0], T(0)};

  const T h = T(n - 1) * q;
  std::size_t k = std::size_t(std::floor(double(h)));
  if (k >= n - 1) k = n - 2;  // q == 1 uses the last bracket
  const T frac = h - T(k);

  std::vector<T> scratch(values.begin(), values.end());
  T vk, vk1;
  detail::order_stats_pair(scratch, k, vk, vk1);

  const T gap = vk1 - vk;
  return {vk + frac * gap, T(n - 1) * gap};
}

template <typename T>
T quantile(std::span<const T> values, T q) {
  return quantile_with_grad(values, q).value;
}

/// Noise scales for one feature level. `sigma` and `dsigma_dq` are flat over
/// the statistic groups; `broadcast_index` maps a feature element (n, c) to
/// its group.
template <typename T>
struct NoiseScales {
  SamplingDim dim = SamplingDim::per_channel_in_batch;
  std::size_t batch = 0, channels = 0;
  std::vector<T> sigma;
  std::vector<T> dsigma_dq;

  std::size_t group_of(std::size_t n, std::size_t c) const {
    switch (dim) {
      case SamplingDim::per_channel_in_batch: return c;
      case SamplingDim::per_channel_in_sample: return n * channels + c;
      case SamplingDim::per_sample: return n;
      case SamplingDim::per_batch: return 0;
    }
    return 0;
  }

  std::size_t group_count() const {
    switch (dim) {
      case SamplingDim::per_channel_in_batch: return channels;
      case SamplingDim::per_channel_in_sample: return batch * channels;
      case SamplingDim::per_sample: return batch;
      case SamplingDim::per_batch: return 1;
    }
    return 1;
  }
};

namespace detail {

/// Gather the values of one statistic group. `mode` 0: |f1-f2|; 1: signed
/// concat of f1 and f2; 2: |concat|.
template <typename T>
void gather_group(const Tensor<T>& f1, const Tensor<T>& f2, SamplingDim dim,
                  std::size_t g, int mode, std::vector<T>& out) {
  const std::size_t N = f1.dim(0), C = f1.dim(1), HW = f1.dim(2) * f1.dim(3);
  std::size_t n_lo = 0, n_hi = N, c_lo = 0, c_hi = C;
  switch (dim) {
    case SamplingDim::per_channel_in_batch: c_lo = g; c_hi = g + 1; break;
    case SamplingDim::per_channel_in_sample:
      n_lo = g / C; n_hi = n_lo + 1; c_lo = g % C; c_hi = c_lo + 1; break;
    case SamplingDim::per_sample: n_lo = g; n_hi = g + 1; break;
    case SamplingDim::per_batch: break;
  }
  const std::size_t count = (n_hi - n_lo) * (c_hi - c_lo) * HW;
  out.clear();
  out.reserve(mode == 0 ? count : 2 * count);
  for (std::size_t n = n_lo; n < n_hi; ++n)
    for (std::size_t c = c_lo; c < c_hi; ++c) {
      const T* a = f1.data() + (n * C + c) * HW;
      const T* b = f2.data() + (n * C + c) * HW;
      if (mode == 0) {
        for (std::size_t i = 0; i < HW; ++i) out.push_back(std::abs(a[i] - b[i]));
      } else if (mode == 1) {
        for (std::size_t i = 0; i < HW; ++i) out.push_back(a[i]);
        for (std::size_t i = 0; i < HW; ++i) out.push_back(b[i]);
      } else {
        for (std::size_t i = 0; i < HW; ++i) out.push_back(std::abs(a[i]));
        for (std::size_t i = 0; i < HW; ++i) out.push_back(std::abs(b[i]));
      }
    }
}

}  // namespace detail

/// sigma_I = Quantile(|f1 - f2|, q_I) over the groups selected by `dim`.
/// Inputs are batched (N, C, H, W) feature maps.
template <typename T>
NoiseScales<T> estimate_sigma_irrelevant(const Tensor<T>& f1, const Tensor<T>& f2,
                                         T q_irrelevant, SamplingDim dim) {
  require(f1.same_shape(f2), ErrorClass::shape_mismatch,
          "sigma_irrelevant: feature shapes differ");
  require(std::isfinite(double(q_irrelevant)), ErrorClass::numeric_failure,
          "sigma_irrelevant: quantile parameter is non-finite");
  NoiseScales<T> out;
  out.dim = dim;
  out.batch = f1.dim(0);
  out.channels = f1.dim(1);
  const std::size_t G = out.group_count();
  out.sigma.resize(G);
  out.dsigma_dq.resize(G);
  bool bad_values = false;
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    std::vector<T> group;
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (std::ptrdiff_t g = 0; g < std::ptrdiff_t(G); ++g) {
      detail::gather_group(f1, f2, dim, std::size_t(g), 0, group);
      try {
        auto r = quantile_with_grad<T>(group, q_irrelevant);
        out.sigma[std::size_t(g)] = r.value;
        out.dsigma_dq[std::size_t(g)] = r.dvalue_dq;
      } catch (const Error&) {
        bad_values = true;  // rethrown below, outside the parallel region
      }
    }
  }
  require(!bad_values, ErrorClass::numeric_failure,
          "sigma_irrelevant: features contain non-finite values");
  return out;
}

/// sigma_R = Quantile(Concat([f1, f2]), q_R): the signed values of both
/// feature sets pooled per group, clamped at zero afterwards (gradient is
/// zeroed where the clamp is active). `abs_values` switches to |.| pooling.
template <typename T>
NoiseScales<T> estimate_sigma_relevant(const Tensor<T>& f1, const Tensor<T>& f2,
                                       T q_relevant, SamplingDim dim,
                                       bool abs_values = false) {
  require(f1.same_shape(f2), ErrorClass::shape_mismatch,
          "sigma_relevant: feature shapes differ");
  require(std::isfinite(double(q_relevant)), ErrorClass::numeric_failure,
          "sigma_relevant: quantile parameter is non-finite");
  NoiseScales<T> out;
  out.dim = dim;
  out.batch = f1.dim(0);
  out.channels = f1.dim(1);
  const std::size_t G = out.group_count();
  out.sigma.resize(G);
  out.dsigma_dq.resize(G);
  bool bad_values = false;
#ifdef _OPENMP
#pragma omp parallel
#endif
  {
    std::vector<T> group;
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (std::ptrdiff_t g = 0; g < std::ptrdiff_t(G); ++g) {
      detail::gather_group(f1, f2, dim, std::size_t(g), abs_values ? 2 : 1, group);
      try {
        auto r = quantile_with_grad<T>(group, q_relevant);
        if (r.value < T(0)) {
          out.sigma[std::size_t(g)] = T(0);
          out.dsigma_dq[std::size_t(g)] = T(0);
        } else {
          out.sigma[std::size_t(g)] = r.value;
          out.dsigma_dq[std::size_t(g)] = r.dvalue_dq;
        }
      } catch (const Error&) {
        bad_values = true;  // rethrown below, outside the parallel region
      }
    }
  }
  require(!bad_values, ErrorClass::numeric_failure,
          "sigma_relevant: features contain non-finite values");
  return out;
}

}  // namespace mason
