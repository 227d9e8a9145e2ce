#pragma once

#include <cmath>
#include <cstddef>

#include "mason/tensor.hpp"

namespace mason {

template <typename T>
inline T sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

/// Core of the soft Dice loss on one prediction map of n elements:
///   1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s),  p = sigmoid(logits).
/// Smoothing s keeps the empty-target case finite; the value stays in [0, 1).
/// When `grad` is non-null, d(loss)/d(logit) is accumulated into it with
/// weight `grad_scale` so batch means can be formed in place.
template <typename T>
T dice_loss_span(const T* logits, const T* target, std::size_t n, T* grad,
                 T grad_scale, T smooth) {
  double inter = 0, psum = 0, tsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = double(sigmoid(logits[i]));
    const double t = double(target[i]);
    inter += p * t;
    psum += p;
    tsum += t;
  }
  const double a = 2.0 * inter + double(smooth);
  const double b = psum + tsum + double(smooth);
  if (grad) {
    // d(1 - a/b)/dp_i = -(2*t_i*b - a) / b^2, then chain through the sigmoid
    const double inv_b2 = 1.0 / (b * b);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = double(sigmoid(logits[i]));
      const double t = double(target[i]);
      const double dldp = -(2.0 * t * b - a) * inv_b2;
      grad[i] += grad_scale * T(dldp * p * (1.0 - p));
    }
  }
  return T(1.0 - a / b);
}

template <typename T>
T dice_loss(const Tensor<T>& logits, const Tensor<T>& target, T smooth = T(1)) {
  require(logits.same_shape(target), ErrorClass::shape_mismatch,
          "dice_loss: shape mismatch");
  return dice_loss_span<T>(logits.data(), target.data(), logits.size(), nullptr,
                           T(0), smooth);
}

template <typename T>
T dice_loss_grad(const Tensor<T>& logits, const Tensor<T>& target,
                 Tensor<T>& grad, T grad_scale = T(1), T smooth = T(1)) {
  require(logits.same_shape(target), ErrorClass::shape_mismatch,
          "dice_loss: shape mismatch");
  require(logits.same_shape(grad), ErrorClass::shape_mismatch,
          "dice_loss: grad shape mismatch");
  return dice_loss_span<T>(logits.data(), target.data(), logits.size(),
                           grad.data(), grad_scale, smooth);
}

}  // namespace mason
