#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <type_traits>
#include <utility>
#include <vector>

#include "mason/common.hpp"

namespace mason {

namespace detail {

/// Allocator that default-initializes (i.e. leaves trivial types
/// uninitialized) on resize, for buffers that are fully overwritten.
template <typename T, typename A = std::allocator<T>>
class default_init_allocator : public A {
 public:
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U, typename std::allocator_traits<
                                                A>::template rebind_alloc<U>>;
  };
  using A::A;

  template <typename U>
  void construct(U* ptr) noexcept(
      std::is_nothrow_default_constructible<U>::value) {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <typename U, typename... Args>
  void construct(U* ptr, Args&&... args) {
    std::allocator_traits<A>::construct(static_cast<A&>(*this), ptr,
                                        std::forward<Args>(args)...);
  }
};

}  // namespace detail

/// Dense row-major tensor with up to four dimensions. Feature maps use
/// (N, C, H, W); single images use (C, H, W); masks use (H, W).
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)) {
    data_.resize(count(shape_));
    std::fill(data_.begin(), data_.end(), T(0));
  }

  /// Storage left uninitialized; every element must be written before use.
  static Tensor uninitialized(std::vector<std::size_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_.resize(count(t.shape_));
    return t;
  }

  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static Tensor zeros(std::vector<std::size_t> shape) {
    return Tensor(std::move(shape));
  }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return i < shape_.size() ? shape_[i] : 1; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  using Storage = std::vector<T, detail::default_init_allocator<T>>;

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Storage& vec() { return data_; }
  const Storage& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // (h, w)
  T& at(std::size_t h, std::size_t w) { return data_[h * shape_[1] + w]; }
  const T& at(std::size_t h, std::size_t w) const {
    return data_[h * shape_[1] + w];
  }

  // (c, h, w)
  T& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  const T& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  // (n, c, h, w)
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& other) {
    require(same_shape(other), ErrorClass::shape_mismatch, "tensor += shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator-=(const Tensor& other) {
    require(same_shape(other), ErrorClass::shape_mismatch, "tensor -= shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator-(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), ErrorClass::shape_mismatch, "tensor - shape mismatch");
    Tensor out(a.shape_);
    for (std::size_t i = 0; i < a.data_.size(); ++i) out.data_[i] = a.data_[i] - b.data_[i];
    return out;
  }

  friend Tensor operator+(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), ErrorClass::shape_mismatch, "tensor + shape mismatch");
    Tensor out(a.shape_);
    for (std::size_t i = 0; i < a.data_.size(); ++i) out.data_[i] = a.data_[i] + b.data_[i];
    return out;
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t(1),
                           std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  Storage data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using MaskU8 = Tensor<std::uint8_t>;

}  // namespace mason
