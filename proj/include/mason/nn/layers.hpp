#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mason/image.hpp"
#include "mason/rng.hpp"
#include "mason/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mason::nn {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
  bool weight_decay;  // biases and norm affines are excluded from decay
};

namespace detail {

template <typename T>
using MatMap = Eigen::Map<
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// (C, H, W) plane -> (C*k*k, oh*ow) patch matrix with zero padding.
/// Stride 1 copies whole row segments.
template <typename T>
void im2col(const T* src, std::size_t C, std::size_t H, std::size_t W,
            std::size_t k, std::size_t stride, std::size_t pad, std::size_t oh,
            std::size_t ow, T* cols) {
  const std::size_t plane = oh * ow;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* dst = cols + ((c * k + ky) * k + kx) * plane;
        const std::ptrdiff_t dx0 = std::ptrdiff_t(kx) - std::ptrdiff_t(pad);
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t sy =
              std::ptrdiff_t(y * stride + ky) - std::ptrdiff_t(pad);
          T* out_row = dst + y * ow;
          if (sy < 0 || sy >= std::ptrdiff_t(H)) {
            std::fill_n(out_row, ow, T(0));
            continue;
          }
          const T* row = src + (c * H + std::size_t(sy)) * W;
          if (stride == 1) {
            // valid x range: 0 <= x + dx0 < W
            const std::size_t x_lo = dx0 < 0 ? std::size_t(-dx0) : 0;
            const std::size_t x_hi =
                std::min(ow, std::size_t(std::ptrdiff_t(W) - dx0));
            std::fill_n(out_row, std::min(x_lo, ow), T(0));
            if (x_hi > x_lo)
              std::copy_n(row + std::ptrdiff_t(x_lo) + dx0, x_hi - x_lo,
                          out_row + x_lo);
            if (x_hi < ow) std::fill_n(out_row + x_hi, ow - x_hi, T(0));
          } else {
            for (std::size_t x = 0; x < ow; ++x) {
              const std::ptrdiff_t sx = std::ptrdiff_t(x * stride) + dx0;
              out_row[x] = (sx < 0 || sx >= std::ptrdiff_t(W)) ? T(0) : row[sx];
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-add patches back into the (C, H, W) plane.
template <typename T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W,
            std::size_t k, std::size_t stride, std::size_t pad, std::size_t oh,
            std::size_t ow, T* dst) {
  const std::size_t plane = oh * ow;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* src = cols + ((c * k + ky) * k + kx) * plane;
        const std::ptrdiff_t dx0 = std::ptrdiff_t(kx) - std::ptrdiff_t(pad);
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t sy =
              std::ptrdiff_t(y * stride + ky) - std::ptrdiff_t(pad);
          if (sy < 0 || sy >= std::ptrdiff_t(H)) continue;
          T* row = dst + (c * H + std::size_t(sy)) * W;
          const T* src_row = src + y * ow;
          if (stride == 1) {
            const std::size_t x_lo = dx0 < 0 ? std::size_t(-dx0) : 0;
            const std::size_t x_hi =
                std::min(ow, std::size_t(std::ptrdiff_t(W) - dx0));
            T* out = row + dx0;
            for (std::size_t x = x_lo; x < x_hi; ++x) out[x] += src_row[x];
          } else {
            for (std::size_t x = 0; x < ow; ++x) {
              const std::ptrdiff_t sx = std::ptrdiff_t(x * stride) + dx0;
              if (sx >= 0 && sx < std::ptrdiff_t(W)) row[sx] += src_row[x];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2D convolution, square kernel, zero padding. Weight layout is
/// (out_ch, in_ch*k*k) so the forward pass is a single GEMM per sample.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch,
         std::size_t kernel, std::size_t stride, std::size_t pad)
      : name_(std::move(name)), in_ch_(in_ch), out_ch_(out_ch), k_(kernel),
        stride_(stride), pad_(pad),
        weight_({out_ch, in_ch * kernel * kernel}),
        bias_({out_ch}),
        wgrad_({out_ch, in_ch * kernel * kernel}),
        bgrad_({out_ch}) {}

  /// Kaiming-normal fan-in init.
  void init_he(RngStream& rng) {
    const double std = std::sqrt(2.0 / double(in_ch_ * k_ * k_));
    for (auto& w : weight_.vec()) w = T(rng.normal() * std);
    bias_.fill(T(0));
  }

  void init_zero() {
    weight_.fill(T(0));
    bias_.fill(T(0));
  }

  std::size_t out_h(std::size_t h) const { return (h + 2 * pad_ - k_) / stride_ + 1; }
  std::size_t out_w(std::size_t w) const { return (w + 2 * pad_ - k_) / stride_ + 1; }

  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  Tensor<T> forward(const Tensor<T>& x) {
    cached_input_ = x;
    return run_forward();
  }

  Tensor<T> forward(Tensor<T>&& x) {
    cached_input_ = std::move(x);
    return run_forward();
  }

 private:
  Tensor<T> run_forward() {
    const Tensor<T>& x = cached_input_;
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    require(x.dim(1) == in_ch_, ErrorClass::shape_mismatch,
            name_ + ": channel mismatch");
    const std::size_t oh = out_h(H), ow = out_w(W);
    Tensor<T> y = Tensor<T>::uninitialized({N, out_ch_, oh, ow});
    const std::size_t rows = in_ch_ * k_ * k_, plane = oh * ow;
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
      std::vector<T> cols(pointwise() ? 0 : rows * plane);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
      for (std::ptrdiff_t n = 0; n < std::ptrdiff_t(N); ++n) {
        const T* col_ptr;
        if (pointwise()) {
          // 1x1 stride-1: the patch matrix is the input plane itself
          col_ptr = x.data() + std::size_t(n) * in_ch_ * H * W;
        } else {
          detail::im2col(x.data() + std::size_t(n) * in_ch_ * H * W, in_ch_, H, W,
                         k_, stride_, pad_, oh, ow, cols.data());
          col_ptr = cols.data();
        }
        detail::ConstMatMap<T> wm(weight_.data(), out_ch_, rows);
        detail::ConstMatMap<T> cm(col_ptr, rows, plane);
        detail::MatMap<T> ym(y.data() + std::size_t(n) * out_ch_ * plane,
                             out_ch_, plane);
        ym.noalias() = wm * cm;
        for (std::size_t c = 0; c < out_ch_; ++c)
          ym.row(c).array() += bias_[c];
      }
    }
    return y;
  }

 public:

  /// Accumulates weight/bias gradients and returns the input gradient.
  /// Per-sample weight-gradient slots are reduced in index order, so the
  /// result does not depend on the thread schedule.
  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T>& x = cached_input_;
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t oh = dy.dim(2), ow = dy.dim(3);
    const std::size_t rows = in_ch_ * k_ * k_, plane = oh * ow;
    Tensor<T> dx({N, in_ch_, H, W});
    Tensor<T> wslots = Tensor<T>::uninitialized({N, out_ch_ * rows});
#ifdef _OPENMP
#pragma omp parallel
#endif
    {
      std::vector<T> cols(pointwise() ? 0 : rows * plane);
      std::vector<T> dcols(pointwise() ? 0 : rows * plane);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
      for (std::ptrdiff_t n = 0; n < std::ptrdiff_t(N); ++n) {
        const T* col_ptr;
        if (pointwise()) {
          col_ptr = x.data() + std::size_t(n) * in_ch_ * H * W;
        } else {
          detail::im2col(x.data() + std::size_t(n) * in_ch_ * H * W, in_ch_, H, W,
                         k_, stride_, pad_, oh, ow, cols.data());
          col_ptr = cols.data();
        }
        detail::ConstMatMap<T> dym(dy.data() + std::size_t(n) * out_ch_ * plane,
                                   out_ch_, plane);
        detail::ConstMatMap<T> cm(col_ptr, rows, plane);
        detail::MatMap<T> dwm(wslots.data() + std::size_t(n) * out_ch_ * rows,
                              out_ch_, rows);
        dwm.noalias() = dym * cm.transpose();
        detail::ConstMatMap<T> wm(weight_.data(), out_ch_, rows);
        if (pointwise()) {
          detail::MatMap<T> dxm(dx.data() + std::size_t(n) * in_ch_ * H * W, rows,
                                plane);
          dxm.noalias() = wm.transpose() * dym;
        } else {
          detail::MatMap<T> dcm(dcols.data(), rows, plane);
          dcm.noalias() = wm.transpose() * dym;
          detail::col2im(dcols.data(), in_ch_, H, W, k_, stride_, pad_, oh, ow,
                         dx.data() + std::size_t(n) * in_ch_ * H * W);
        }
      }
    }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < out_ch_ * rows; ++i)
        wgrad_[i] += wslots[n * out_ch_ * rows + i];
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < out_ch_; ++c) {
        T s = 0;
        const T* p = dy.data() + (n * out_ch_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        bgrad_[c] += s;
      }
    return dx;
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".weight", &weight_, &wgrad_, true});
    out.push_back({name_ + ".bias", &bias_, &bgrad_, false});
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  std::string name_;
  std::size_t in_ch_ = 0, out_ch_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Tensor<T> weight_, bias_, wgrad_, bgrad_;
  Tensor<T> cached_input_;
};

/// BatchNorm over (N, H, W) per channel. Training mode uses batch statistics
/// and updates running estimates; eval mode applies the running estimates.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, std::size_t channels, T eps = T(1e-5),
              T momentum = T(0.1))
      : name_(std::move(name)), ch_(channels), eps_(eps), momentum_(momentum),
        gamma_({channels}), beta_({channels}), ggrad_({channels}),
        bgrad_({channels}), running_mean_({channels}), running_var_({channels}) {
    gamma_.fill(T(1));
    running_var_.fill(T(1));
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    cached_input_ = x;
    return run_forward(training);
  }

  Tensor<T> forward(Tensor<T>&& x, bool training) {
    cached_input_ = std::move(x);
    return run_forward(training);
  }

 private:
  Tensor<T> run_forward(bool training) {
    const Tensor<T>& x = cached_input_;
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t plane = H * W, m = N * plane;
    training_ = training;
    Tensor<T> y = Tensor<T>::uninitialized(x.shape());
    if (training) {
      mean_.assign(ch_, T(0));
      var_.assign(ch_, T(0));
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (std::ptrdiff_t cc = 0; cc < std::ptrdiff_t(ch_); ++cc) {
        const std::size_t c = std::size_t(cc);
        double s = 0, s2 = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* p = x.data() + (n * ch_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            s += double(p[i]);
            s2 += double(p[i]) * double(p[i]);
          }
        }
        const double mu = s / double(m);
        const double v = std::max(0.0, s2 / double(m) - mu * mu);
        mean_[c] = T(mu);
        var_[c] = T(v);
        const double unbiased = m > 1 ? v * double(m) / double(m - 1) : v;
        running_mean_[c] = (T(1) - momentum_) * running_mean_[c] + momentum_ * T(mu);
        running_var_[c] = (T(1) - momentum_) * running_var_[c] + momentum_ * T(unbiased);
      }
    }
    const std::vector<T>* mean = training ? &mean_ : nullptr;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t cc = 0; cc < std::ptrdiff_t(ch_); ++cc) {
      const std::size_t c = std::size_t(cc);
      const T mu = mean ? (*mean)[c] : running_mean_[c];
      const T v = training ? var_[c] : running_var_[c];
      const T inv = T(1) / std::sqrt(v + eps_);
      const T g = gamma_[c], b = beta_[c];
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.data() + (n * ch_ + c) * plane;
        T* q = y.data() + (n * ch_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mu) * inv * g + b;
      }
    }
    return y;
  }

 public:

  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T>& x = cached_input_;
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const std::size_t plane = H * W, m = N * plane;
    Tensor<T> dx = Tensor<T>::uninitialized(x.shape());
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t cc = 0; cc < std::ptrdiff_t(ch_); ++cc) {
      const std::size_t c = std::size_t(cc);
      const T mu = training_ ? mean_[c] : running_mean_[c];
      const T v = training_ ? var_[c] : running_var_[c];
      const T inv = T(1) / std::sqrt(v + eps_);
      double sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* px = x.data() + (n * ch_ + c) * plane;
        const T* pd = dy.data() + (n * ch_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += double(pd[i]);
          sum_dy_xhat += double(pd[i]) * double((px[i] - mu) * inv);
        }
      }
      ggrad_[c] += T(sum_dy_xhat);
      bgrad_[c] += T(sum_dy);
      const T g = gamma_[c];
      if (training_) {
        const T k1 = T(sum_dy) / T(m);
        const T k2 = T(sum_dy_xhat) / T(m);
        for (std::size_t n = 0; n < N; ++n) {
          const T* px = x.data() + (n * ch_ + c) * plane;
          const T* pd = dy.data() + (n * ch_ + c) * plane;
          T* pq = dx.data() + (n * ch_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const T xhat = (px[i] - mu) * inv;
            pq[i] = g * inv * (pd[i] - k1 - xhat * k2);
          }
        }
      } else {
        for (std::size_t n = 0; n < N; ++n) {
          const T* pd = dy.data() + (n * ch_ + c) * plane;
          T* pq = dx.data() + (n * ch_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) pq[i] = g * inv * pd[i];
        }
      }
    }
    return dx;
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({name_ + ".gamma", &gamma_, &ggrad_, false});
    out.push_back({name_ + ".beta", &beta_, &bgrad_, false});
  }

  /// Running statistics travel with checkpoints but take no gradient.
  void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
    out.push_back({name_ + ".running_mean", &running_mean_});
    out.push_back({name_ + ".running_var", &running_var_});
  }

 private:
  std::string name_;
  std::size_t ch_ = 0;
  T eps_ = T(1e-5), momentum_ = T(0.1);
  bool training_ = true;
  Tensor<T> gamma_, beta_, ggrad_, bgrad_;
  Tensor<T> running_mean_, running_var_;
  std::vector<T> mean_, var_;
  Tensor<T> cached_input_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> y = Tensor<T>::uninitialized(x.shape());
    mask_.resize(x.size());
    const std::size_t n = x.size();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) {
      const bool pos = x[std::size_t(i)] > T(0);
      mask_[std::size_t(i)] = pos;
      y[std::size_t(i)] = pos ? x[std::size_t(i)] : T(0);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = Tensor<T>::uninitialized(dy.shape());
    const std::size_t n = dy.size();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i)
      dx[std::size_t(i)] = mask_[std::size_t(i)] ? dy[std::size_t(i)] : T(0);
    return dx;
  }

 private:
  std::vector<std::uint8_t> mask_;
};

/// Bilinear resize of (N, C, H, W) to a fixed target size. The backward pass
/// is the exact adjoint of the forward sparse map.
template <typename T>
class BilinearResize {
 public:
  BilinearResize() = default;
  BilinearResize(std::size_t dst_h, std::size_t dst_w)
      : dst_h_(dst_h), dst_w_(dst_w) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (plan_.src_h != H || plan_.src_w != W || plan_.dst_h != dst_h_ ||
        plan_.dst_w != dst_w_)
      plan_ = make_bilinear_plan(H, W, dst_h_, dst_w_);
    Tensor<T> y = Tensor<T>::uninitialized({N, C, dst_h_, dst_w_});
    const std::size_t planes = N * C;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t p = 0; p < std::ptrdiff_t(planes); ++p)
      bilinear_apply(plan_, x.data() + std::size_t(p) * H * W,
                     y.data() + std::size_t(p) * dst_h_ * dst_w_);
    src_h_ = H;
    src_w_ = W;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t N = dy.dim(0), C = dy.dim(1);
    Tensor<T> dx({N, C, src_h_, src_w_});
    const std::size_t planes = N * C;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t p = 0; p < std::ptrdiff_t(planes); ++p)
      bilinear_apply_adjoint(plan_, dy.data() + std::size_t(p) * dst_h_ * dst_w_,
                             dx.data() + std::size_t(p) * src_h_ * src_w_);
    return dx;
  }

 private:
  std::size_t dst_h_ = 0, dst_w_ = 0, src_h_ = 0, src_w_ = 0;
  BilinearPlan plan_;
};

/// Adaptive average pooling to (s, s), PyTorch bin convention.
template <typename T>
class AdaptiveAvgPool {
 public:
  AdaptiveAvgPool() = default;
  explicit AdaptiveAvgPool(std::size_t out_size) : s_(out_size) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    src_h_ = H;
    src_w_ = W;
    Tensor<T> y = Tensor<T>::uninitialized({N, C, s_, s_});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const T* p = x.data() + (n * C + c) * H * W;
        T* q = y.data() + (n * C + c) * s_ * s_;
        for (std::size_t oy = 0; oy < s_; ++oy) {
          const std::size_t y0 = oy * H / s_, y1 = ((oy + 1) * H + s_ - 1) / s_;
          for (std::size_t ox = 0; ox < s_; ++ox) {
            const std::size_t x0 = ox * W / s_, x1 = ((ox + 1) * W + s_ - 1) / s_;
            double acc = 0;
            for (std::size_t yy = y0; yy < y1; ++yy)
              for (std::size_t xx = x0; xx < x1; ++xx) acc += double(p[yy * W + xx]);
            q[oy * s_ + ox] = T(acc / double((y1 - y0) * (x1 - x0)));
          }
        }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t N = dy.dim(0), C = dy.dim(1);
    const std::size_t H = src_h_, W = src_w_;
    Tensor<T> dx({N, C, H, W});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const T* q = dy.data() + (n * C + c) * s_ * s_;
        T* p = dx.data() + (n * C + c) * H * W;
        for (std::size_t oy = 0; oy < s_; ++oy) {
          const std::size_t y0 = oy * H / s_, y1 = ((oy + 1) * H + s_ - 1) / s_;
          for (std::size_t ox = 0; ox < s_; ++ox) {
            const std::size_t x0 = ox * W / s_, x1 = ((ox + 1) * W + s_ - 1) / s_;
            const T g = q[oy * s_ + ox] / T((y1 - y0) * (x1 - x0));
            for (std::size_t yy = y0; yy < y1; ++yy)
              for (std::size_t xx = x0; xx < x1; ++xx) p[yy * W + xx] += g;
          }
        }
      }
    return dx;
  }

 private:
  std::size_t s_ = 1, src_h_ = 0, src_w_ = 0;
};

/// Concatenate along the channel axis.
template <typename T>
inline Tensor<T> channel_concat(const std::vector<const Tensor<T>*>& parts) {
  const std::size_t N = parts[0]->dim(0);
  const std::size_t H = parts[0]->dim(2), W = parts[0]->dim(3);
  std::size_t C = 0;
  for (const auto* p : parts) C += p->dim(1);
  Tensor<T> out = Tensor<T>::uninitialized({N, C, H, W});
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t co = 0;
    for (const auto* p : parts) {
      const std::size_t pc = p->dim(1);
      std::copy_n(p->data() + n * pc * H * W, pc * H * W,
                  out.data() + (n * C + co) * H * W);
      co += pc;
    }
  }
  return out;
}

/// Split a channel-concatenated gradient back into per-part gradients.
template <typename T>
inline std::vector<Tensor<T>> channel_split(const Tensor<T>& grad,
                                            const std::vector<std::size_t>& channels) {
  const std::size_t N = grad.dim(0), C = grad.dim(1);
  const std::size_t H = grad.dim(2), W = grad.dim(3);
  std::vector<Tensor<T>> parts;
  std::size_t co = 0;
  for (std::size_t pc : channels) {
    Tensor<T> part = Tensor<T>::uninitialized({N, pc, H, W});
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(grad.data() + (n * C + co) * H * W, pc * H * W,
                  part.data() + n * pc * H * W);
    parts.push_back(std::move(part));
    co += pc;
  }
  return parts;
}

}  // namespace mason::nn
