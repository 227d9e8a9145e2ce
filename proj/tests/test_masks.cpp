#include <gtest/gtest.h>

#include <queue>

#include "mason/changegen.hpp"
#include "mason/image.hpp"
#include "mason/perlin.hpp"

using namespace mason;

namespace {

double coverage(const MaskU8& m) {
  double s = 0;
  for (std::size_t i = 0; i < m.size(); ++i) s += m[i];
  return s / double(m.size());
}

// mean size of 4-connected foreground components
double mean_component_size(const MaskU8& m) {
  const std::size_t H = m.dim(0), W = m.dim(1);
  std::vector<char> seen(H * W, 0);
  double total = 0;
  std::size_t comps = 0;
  for (std::size_t start = 0; start < H * W; ++start) {
    if (!m[start] || seen[start]) continue;
    ++comps;
    std::queue<std::size_t> q;
    q.push(start);
    seen[start] = 1;
    while (!q.empty()) {
      const std::size_t i = q.front();
      q.pop();
      ++total;
      const std::size_t y = i / W, x = i % W;
      const std::size_t nbrs[4][2] = {{y + 1, x}, {y - 1, x}, {y, x + 1}, {y, x - 1}};
      for (const auto& nb : nbrs) {
        if (nb[0] >= H || nb[1] >= W) continue;
        const std::size_t j = nb[0] * W + nb[1];
        if (m[j] && !seen[j]) {
          seen[j] = 1;
          q.push(j);
        }
      }
    }
  }
  return comps ? total / double(comps) : 0.0;
}

// independent fractional-footprint box average for one coarse cell
double oracle_cell_average(const MaskU8& fine, std::size_t dst_h, std::size_t dst_w,
                           std::size_t cy, std::size_t cx) {
  const double sy = double(fine.dim(0)) / double(dst_h);
  const double sx = double(fine.dim(1)) / double(dst_w);
  double acc = 0;
  for (std::size_t h = 0; h < fine.dim(0); ++h)
    for (std::size_t w = 0; w < fine.dim(1); ++w) {
      const double oy = std::max(0.0, std::min(double(cy + 1) * sy, double(h + 1)) -
                                          std::max(double(cy) * sy, double(h)));
      const double ox = std::max(0.0, std::min(double(cx + 1) * sx, double(w + 1)) -
                                          std::max(double(cx) * sx, double(w)));
      acc += oy * ox * double(fine.at(h, w));
    }
  return acc / (sy * sx);
}

}  // namespace

TEST(PerlinMask, ThresholdAboveOneSelectsNothing) {
  RngStream rng = make_stream(1, "perlin");
  MaskU8 m = perlin_mask(64, 64, 8, 1.0f + 1e-6f, rng);
  EXPECT_EQ(coverage(m), 0.0);
}

TEST(PerlinMask, ThresholdZeroSelectsEverything) {
  RngStream rng = make_stream(2, "perlin");
  MaskU8 m = perlin_mask(64, 64, 8, 0.0f, rng);
  EXPECT_EQ(coverage(m), 1.0);
}

TEST(PerlinMask, MeanCoverageNearHalf) {
  double total = 0;
  for (int i = 0; i < 1000; ++i) {
    RngStream rng = make_stream(100, "perlin_cov", std::uint64_t(i));
    total += coverage(perlin_mask(128, 128, 16, 0.5f, rng));
  }
  const double mean = total / 1000.0;
  EXPECT_NEAR(mean, 0.5, 0.05);
}

TEST(PerlinMask, SpatiallyContiguousBlobs) {
  double mean_sizes = 0;
  for (int i = 0; i < 20; ++i) {
    RngStream rng = make_stream(7, "perlin_blob", std::uint64_t(i));
    mean_sizes += mean_component_size(perlin_mask(128, 128, 16, 0.5f, rng));
  }
  EXPECT_GT(mean_sizes / 20.0, 1.0);
}

TEST(RectangleMask, FullExtentWhenMinSideIsExtent) {
  RngStream rng = make_stream(3, "rect");
  RectangleMask rm = rectangle_mask(32, 32, 32, rng);
  EXPECT_EQ(coverage(rm.mask), 1.0);
}

TEST(RectangleMask, MinimumSideRespected) {
  for (int i = 0; i < 50; ++i) {
    RngStream rng = make_stream(4, "rect_min", std::uint64_t(i));
    RectangleMask rm = rectangle_mask(128, 128, 16, rng);
    ASSERT_FALSE(rm.rects.empty());
    EXPECT_LE(rm.rects.size(), 3u);
    for (const auto& r : rm.rects) {
      EXPECT_GE(r.y1 - r.y0, 16u);
      EXPECT_GE(r.x1 - r.x0, 16u);
    }
  }
}

TEST(RectangleMask, MaskEqualsUnionOfLoggedRectangles) {
  for (int i = 0; i < 25; ++i) {
    RngStream rng = make_stream(5, "rect_union", std::uint64_t(i));
    RectangleMask rm = rectangle_mask(64, 96, 4, rng);
    MaskU8 rebuilt({64, 96});
    for (const auto& r : rm.rects)
      for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x) rebuilt.at(y, x) = 1;
    EXPECT_TRUE(rebuilt == rm.mask);
  }
}

TEST(MaskDownscale, MatchesFootprintAverageExhaustively32to4) {
  for (int trial = 0; trial < 200; ++trial) {
    RngStream rng = make_stream(6, "downscale", std::uint64_t(trial));
    MaskU8 fine({32, 32});
    for (std::size_t i = 0; i < fine.size(); ++i) fine[i] = rng.bernoulli(0.5);
    MaskU8 coarse = downscale_binary_mask(fine, 4, 4);
    for (std::size_t cy = 0; cy < 4; ++cy)
      for (std::size_t cx = 0; cx < 4; ++cx) {
        const double avg = oracle_cell_average(fine, 4, 4, cy, cx);
        EXPECT_EQ(coarse.at(cy, cx), avg > 0.5 ? 1 : 0)
            << "cell " << cy << "," << cx << " avg " << avg;
      }
  }
}

TEST(MaskDownscale, FractionalFactors) {
  RngStream rng = make_stream(8, "downscale_frac");
  MaskU8 fine({30, 30});
  for (std::size_t i = 0; i < fine.size(); ++i) fine[i] = rng.bernoulli(0.4);
  MaskU8 coarse = downscale_binary_mask(fine, 4, 4);
  for (std::size_t cy = 0; cy < 4; ++cy)
    for (std::size_t cx = 0; cx < 4; ++cx) {
      const double avg = oracle_cell_average(fine, 4, 4, cy, cx);
      EXPECT_EQ(coarse.at(cy, cx), avg > 0.5 ? 1 : 0);
    }
}

TEST(ChangeMask, FeatureResolutionsFollowSharedRule) {
  RngStream rng = make_stream(9, "changemask");
  const std::vector<LevelShape> levels{{1, 16, 32, 32}, {2, 32, 16, 16},
                                       {3, 64, 8, 8}, {4, 64, 8, 8}};
  ChangeMask cm = sample_perlin_mask(128, 128, 0.5f, 16, rng, levels);
  ASSERT_EQ(cm.feature_res.size(), 4u);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    EXPECT_EQ(cm.layer_ids[l], levels[l].layer_id);
    MaskU8 expect =
        downscale_binary_mask(cm.image_res, levels[l].h, levels[l].w);
    EXPECT_TRUE(cm.feature_res[l] == expect);
    for (std::size_t i = 0; i < cm.feature_res[l].size(); ++i)
      EXPECT_LE(cm.feature_res[l][i], 1);
  }
}
