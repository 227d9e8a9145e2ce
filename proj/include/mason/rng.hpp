#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "mason/common.hpp"

namespace mason {

/// Counter-based random stream. Every consumer derives its own stream from a
/// key built out of (seed, purpose tag, indices), so batch items, pairs and
/// layers can be processed in any order or in parallel without changing the
/// numbers they draw.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : state_(key) {
    // Decorrelate nearby keys before the first draw.
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() {
    // splitmix64
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() {
    return double(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in (0, 1]; safe as a log() argument.
  double uniform_pos() {
    return double((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via the Marsaglia polar method (the spare is cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
  }

  /// Unit-variance Laplace (scale 1/sqrt(2)), so sigma * laplace_unit() has
  /// standard deviation sigma just like sigma * normal().
  double laplace_unit() {
    double u = uniform_pos() - 0.5;  // (-0.5, 0.5]
    double mag = -std::log(1.0 - 2.0 * std::abs(u));
    double b = 1.0 / std::numbers::sqrt2;
    return (u >= 0 ? b : -b) * mag;
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Key derivation for counter-based streams.
inline std::uint64_t rng_key(std::uint64_t seed, std::string_view purpose,
                             std::uint64_t a = 0, std::uint64_t b = 0,
                             std::uint64_t c = 0) {
  std::uint64_t h = fnv1a(purpose);
  h = fnv1a(&seed, sizeof(seed), h);
  h = fnv1a(&a, sizeof(a), h);
  h = fnv1a(&b, sizeof(b), h);
  h = fnv1a(&c, sizeof(c), h);
  return h;
}

inline RngStream make_stream(std::uint64_t seed, std::string_view purpose,
                             std::uint64_t a = 0, std::uint64_t b = 0,
                             std::uint64_t c = 0) {
  return RngStream(rng_key(seed, purpose, a, b, c));
}

}  // namespace mason
