#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mason/quantile.hpp"
#include "mason/rng.hpp"

using namespace mason;

namespace {

// Independent sort-and-interpolate oracle (rank = (n-1)*q).
double oracle_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = double(v.size() - 1) * q;
  const std::size_t k = std::size_t(std::floor(h));
  if (k + 1 >= v.size()) return v.back();
  return v[k] + (h - double(k)) * (v[k + 1] - v[k]);
}

std::vector<double> random_values(RngStream& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale + rng.uniform(-1.0, 1.0);
  return v;
}

// Collect the group values the estimators are defined over, with loops
// written independently of the implementation.
std::vector<std::vector<double>> oracle_groups_abs_diff(const Tensor<double>& f1,
                                                        const Tensor<double>& f2,
                                                        SamplingDim dim) {
  const std::size_t N = f1.dim(0), C = f1.dim(1), H = f1.dim(2), W = f1.dim(3);
  std::size_t groups = 1;
  if (dim == SamplingDim::per_channel_in_batch) groups = C;
  if (dim == SamplingDim::per_channel_in_sample) groups = N * C;
  if (dim == SamplingDim::per_sample) groups = N;
  std::vector<std::vector<double>> out(groups);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double d = std::abs(f1.at(n, c, y, x) - f2.at(n, c, y, x));
          std::size_t g = 0;
          if (dim == SamplingDim::per_channel_in_batch) g = c;
          if (dim == SamplingDim::per_channel_in_sample) g = n * C + c;
          if (dim == SamplingDim::per_sample) g = n;
          out[g].push_back(d);
        }
  return out;
}

std::vector<std::vector<double>> oracle_groups_concat(const Tensor<double>& f1,
                                                      const Tensor<double>& f2,
                                                      SamplingDim dim) {
  const std::size_t N = f1.dim(0), C = f1.dim(1), H = f1.dim(2), W = f1.dim(3);
  std::size_t groups = 1;
  if (dim == SamplingDim::per_channel_in_batch) groups = C;
  if (dim == SamplingDim::per_channel_in_sample) groups = N * C;
  if (dim == SamplingDim::per_sample) groups = N;
  std::vector<std::vector<double>> out(groups);
  for (const auto* f : {&f1, &f2})
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            std::size_t g = 0;
            if (dim == SamplingDim::per_channel_in_batch) g = c;
            if (dim == SamplingDim::per_channel_in_sample) g = n * C + c;
            if (dim == SamplingDim::per_sample) g = n;
            out[g].push_back(f->at(n, c, y, x));
          }
  return out;
}

}  // namespace

TEST(Quantile, ConstantSequence) {
  const std::vector<double> v{5, 5, 5, 5};
  EXPECT_DOUBLE_EQ(quantile<double>(v, 0.3), 5.0);
}

TEST(Quantile, Maximum) {
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile<double>(v, 1.0), 4.0);
}

TEST(Quantile, Median) {
  // (n-1)*q = 1.5: midpoint of the order statistics 2 and 3
  const std::vector<double> v{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(quantile<double>(v, 0.5), 2.5);
}

TEST(Quantile, Errors) {
  std::vector<double> empty;
  EXPECT_THROW(quantile<double>(empty, 0.5), Error);
  const std::vector<double> v{1, 2};
  EXPECT_THROW(quantile<double>(v, -0.1), Error);
  EXPECT_THROW(quantile<double>(v, 1.1), Error);
}

TEST(Quantile, OracleEquivalenceRandom) {
  RngStream rng = make_stream(42, "quantile_oracle");
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(10000);
    auto v = random_values(rng, n, rng.uniform(0.1, 100.0));
    const double q = rng.uniform();
    const double got = quantile<double>(v, q);
    const double want = oracle_quantile(v, q);
    const double denom = std::max(1.0, std::abs(want));
    EXPECT_LE(std::abs(got - want) / denom, 1e-9)
        << "n=" << n << " q=" << q << " got=" << got << " want=" << want;
  }
}

TEST(Quantile, MonotonicInQ) {
  RngStream rng = make_stream(7, "quantile_monotone");
  for (int trial = 0; trial < 50; ++trial) {
    auto v = random_values(rng, 1 + rng.below(500), 5.0);
    double prev = -1e300;
    for (int i = 0; i <= 100; ++i) {
      const double q = double(i) / 100.0;
      const double cur = quantile<double>(v, q);
      EXPECT_GE(cur, prev - 1e-12);
      prev = cur;
    }
  }
}

TEST(Quantile, GradientMatchesFiniteDifferences) {
  RngStream rng = make_stream(13, "quantile_grad");
  const double h = 1e-4;
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    auto v = random_values(rng, 2 + rng.below(400), 3.0);
    const double q = rng.uniform(0.05, 0.95);
    // keep away from order-statistic knots of the piecewise-linear map
    const double rank = q * double(v.size() - 1);
    const double dist = std::abs(rank - std::round(rank));
    if (dist * double(v.size() - 1) < 10 * h * double(v.size() - 1) ||
        dist < 10 * h * double(v.size() - 1))
      continue;
    const auto res = quantile_with_grad<double>(v, q);
    const double fd =
        (quantile<double>(v, q + h) - quantile<double>(v, q - h)) / (2 * h);
    EXPECT_NEAR(res.dvalue_dq, fd, 1e-5) << "n=" << v.size() << " q=" << q;
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(Quantile, ScaleEquivariance) {
  RngStream rng = make_stream(99, "quantile_scale");
  for (int trial = 0; trial < 100; ++trial) {
    auto v = random_values(rng, 1 + rng.below(300), 2.0);
    for (auto& x : v) x = std::abs(x);
    const double q = rng.uniform();
    const double c = rng.uniform(0.01, 50.0);
    std::vector<double> scaled(v);
    for (auto& x : scaled) x *= c;
    EXPECT_NEAR(quantile<double>(scaled, q), c * quantile<double>(v, q),
                1e-9 * std::max(1.0, c * std::abs(quantile<double>(v, q))));
  }
}

// ---------------------------------------------------------------------------
// Sigma estimators
// ---------------------------------------------------------------------------

TEST(SigmaIrrelevant, ZeroWhenEqual) {
  Tensor<double> f({2, 3, 4, 4});
  RngStream rng = make_stream(1, "sigma_zero");
  for (auto& v : f.vec()) v = rng.normal();
  const auto s = estimate_sigma_irrelevant(f, f, 0.85, SamplingDim::per_channel_in_batch);
  for (double v : s.sigma) EXPECT_EQ(v, 0.0);
}

TEST(SigmaIrrelevant, ConstantDifference) {
  Tensor<double> f1({2, 3, 4, 4}), f2({2, 3, 4, 4});
  RngStream rng = make_stream(2, "sigma_const");
  for (std::size_t i = 0; i < f1.size(); ++i) {
    f1[i] = rng.normal();
    f2[i] = f1[i] + 1.0;
  }
  for (double q : {0.1, 0.5, 0.85, 0.99}) {
    const auto s =
        estimate_sigma_irrelevant(f1, f2, q, SamplingDim::per_channel_in_batch);
    for (double v : s.sigma) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(SigmaIrrelevant, MatchesBruteForceAllDims) {
  RngStream rng = make_stream(3, "sigma_bf");
  Tensor<double> f1({2, 3, 4, 4}), f2({2, 3, 4, 4});
  for (std::size_t i = 0; i < f1.size(); ++i) {
    f1[i] = rng.normal() * 2.0;
    f2[i] = rng.normal() * 2.0;
  }
  for (auto dim : {SamplingDim::per_channel_in_batch, SamplingDim::per_channel_in_sample,
                   SamplingDim::per_sample, SamplingDim::per_batch}) {
    const auto s = estimate_sigma_irrelevant(f1, f2, 0.85, dim);
    const auto groups = oracle_groups_abs_diff(f1, f2, dim);
    ASSERT_EQ(s.sigma.size(), groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double want = oracle_quantile(groups[g], 0.85);
      EXPECT_LE(std::abs(s.sigma[g] - want) / std::max(1e-30, std::abs(want)), 1e-7);
    }
  }
}

TEST(SigmaIrrelevant, ShapeMismatch) {
  Tensor<double> f1({2, 3, 4, 4}), f2({2, 3, 4, 5});
  EXPECT_THROW(
      estimate_sigma_irrelevant(f1, f2, 0.85, SamplingDim::per_channel_in_batch),
      Error);
}

TEST(SigmaRelevant, ConstantValues) {
  Tensor<double> f = Tensor<double>::full({2, 3, 4, 4}, 2.0);
  const auto s = estimate_sigma_relevant(f, f, 0.98, SamplingDim::per_channel_in_batch);
  for (double v : s.sigma) EXPECT_DOUBLE_EQ(v, 2.0);
}

TEST(SigmaRelevant, NegativeClampedToZero) {
  Tensor<double> f = Tensor<double>::full({2, 3, 4, 4}, -1.0);
  const auto s = estimate_sigma_relevant(f, f, 0.98, SamplingDim::per_channel_in_batch);
  for (double v : s.sigma) EXPECT_EQ(v, 0.0);
  for (double v : s.dsigma_dq) EXPECT_EQ(v, 0.0);
}

TEST(SigmaRelevant, MatchesBruteForceAllDims) {
  RngStream rng = make_stream(4, "sigma_rel_bf");
  Tensor<double> f1({2, 3, 4, 4}), f2({2, 3, 4, 4});
  for (std::size_t i = 0; i < f1.size(); ++i) {
    f1[i] = rng.normal() * 1.5 + 0.3;
    f2[i] = rng.normal() * 1.5 + 0.3;
  }
  for (auto dim : {SamplingDim::per_channel_in_batch, SamplingDim::per_channel_in_sample,
                   SamplingDim::per_sample, SamplingDim::per_batch}) {
    const auto s = estimate_sigma_relevant(f1, f2, 0.98, dim);
    const auto groups = oracle_groups_concat(f1, f2, dim);
    ASSERT_EQ(s.sigma.size(), groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const double want = std::max(0.0, oracle_quantile(groups[g], 0.98));
      EXPECT_LE(std::abs(s.sigma[g] - want) / std::max(1e-30, std::abs(want)), 1e-7);
    }
  }
}

TEST(SigmaRelevant, AbsVariant) {
  RngStream rng = make_stream(5, "sigma_rel_abs");
  Tensor<double> f1({1, 2, 3, 3}), f2({1, 2, 3, 3});
  for (std::size_t i = 0; i < f1.size(); ++i) {
    f1[i] = rng.normal() - 2.0;  // mostly negative
    f2[i] = rng.normal() - 2.0;
  }
  const auto signed_s =
      estimate_sigma_relevant(f1, f2, 0.98, SamplingDim::per_batch, false);
  const auto abs_s =
      estimate_sigma_relevant(f1, f2, 0.98, SamplingDim::per_batch, true);
  // |values| pushes the high quantile up for mostly-negative inputs
  EXPECT_GT(abs_s.sigma[0], signed_s.sigma[0]);
}
