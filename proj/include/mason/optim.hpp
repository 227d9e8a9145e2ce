#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "mason/nn/layers.hpp"
#include "mason/tensor.hpp"

namespace mason {

/// Cosine schedule without restarts: lr0 * 0.5 * (1 + cos(pi * step/total)).
/// lr(0) = lr0, lr(total) = 0, monotone non-increasing in between.
template <typename T>
T cosine_lr(std::size_t step, std::size_t total, T lr0) {
  require(total > 0, ErrorClass::invalid_argument, "cosine_lr: total must be > 0");
  require(step <= total, ErrorClass::invalid_argument,
          "cosine_lr: step out of range");
  return lr0 * T(0.5) * (T(1) + T(std::cos(std::numbers::pi * double(step) / double(total))));
}

/// AdamW with decoupled weight decay and per-group learning rates. Decay is
/// only applied where the ParamRef asks for it.
template <typename T>
class AdamW {
 public:
  struct Settings {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
  };

  explicit AdamW(Settings s = {}) : s_(s) {}

  void add_group(std::vector<nn::ParamRef<T>> params, T lr, T weight_decay) {
    Group g;
    g.params = std::move(params);
    g.lr = lr;
    g.weight_decay = weight_decay;
    for (const auto& p : g.params) {
      g.m.emplace_back(p.value->shape());
      g.v.emplace_back(p.value->shape());
    }
    groups_.push_back(std::move(g));
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.grad->fill(T(0));
  }

  /// One update with every group's lr scaled by `lr_scale` (the schedule).
  void step(T lr_scale) {
    ++t_;
    const T bc1 = T(1) - T(std::pow(double(s_.beta1), double(t_)));
    const T bc2 = T(1) - T(std::pow(double(s_.beta2), double(t_)));
    for (auto& g : groups_) {
      const T lr = g.lr * lr_scale;
      for (std::size_t i = 0; i < g.params.size(); ++i) {
        auto& p = *g.params[i].value;
        auto& grad = *g.params[i].grad;
        auto& m = g.m[i];
        auto& v = g.v[i];
        const T wd = g.params[i].weight_decay ? g.weight_decay : T(0);
        for (std::size_t j = 0; j < p.size(); ++j) {
          m[j] = s_.beta1 * m[j] + (T(1) - s_.beta1) * grad[j];
          v[j] = s_.beta2 * v[j] + (T(1) - s_.beta2) * grad[j] * grad[j];
          const T mhat = m[j] / bc1;
          const T vhat = v[j] / bc2;
          p[j] -= lr * wd * p[j];
          p[j] -= lr * mhat / (std::sqrt(vhat) + s_.eps);
        }
      }
    }
  }

  std::size_t step_count() const { return t_; }

 private:
  struct Group {
    std::vector<nn::ParamRef<T>> params;
    std::vector<Tensor<T>> m, v;
    T lr;
    T weight_decay;
  };

  Settings s_;
  std::vector<Group> groups_;
  std::size_t t_ = 0;
};

}  // namespace mason
