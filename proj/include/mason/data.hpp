#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mason/image.hpp"
#include "mason/png_io.hpp"
#include "mason/rng.hpp"
#include "mason/tensor.hpp"

namespace mason {

namespace fs = std::filesystem;

/// One co-registered image pair with an optional ground-truth change mask.
/// Ground truth is only ever read by evaluation and analysis.
struct BiTemporalSample {
  Tensor<float> t1, t2;  // (C, H, W), values in [0, 1]
  bool has_gt = false;
  MaskU8 gt;  // (H, W), values {0, 1}
  std::string sample_id;

  std::size_t channels() const { return t1.dim(0); }
  std::size_t height() const { return t1.dim(1); }
  std::size_t width() const { return t1.dim(2); }
};

struct DatasetManifest {
  fs::path root;
  std::string split = "train";  // train | val | test
  std::size_t patch_size = 0;   // 0 keeps full rasters
  std::size_t channel_count = 3;
};

// ---------------------------------------------------------------------------
// Patch cropping: non-overlapping grid, trailing partial tiles anchored to
// the far edge (they may overlap the previous tile but never pad).
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::size_t> tile_offsets(std::size_t extent, std::size_t size) {
  std::vector<std::size_t> offs;
  for (std::size_t o = 0; o + size <= extent; o += size) offs.push_back(o);
  if (offs.empty() || offs.back() + size < extent) offs.push_back(extent - size);
  return offs;
}

template <typename T>
Tensor<T> crop_chw(const Tensor<T>& img, std::size_t y, std::size_t x,
                   std::size_t size) {
  Tensor<T> out({img.dim(0), size, size});
  for (std::size_t c = 0; c < img.dim(0); ++c)
    for (std::size_t h = 0; h < size; ++h)
      for (std::size_t w = 0; w < size; ++w)
        out.at(c, h, w) = img.at(c, y + h, x + w);
  return out;
}

}  // namespace detail

inline std::vector<BiTemporalSample> crop_patches(const BiTemporalSample& sample,
                                                  std::size_t size) {
  require(size > 0 && size <= sample.height() && size <= sample.width(),
          ErrorClass::invalid_argument,
          "crop_patches: patch size " + std::to_string(size) +
              " exceeds raster extent of sample " + sample.sample_id);
  const auto ys = detail::tile_offsets(sample.height(), size);
  const auto xs = detail::tile_offsets(sample.width(), size);
  std::vector<BiTemporalSample> out;
  for (std::size_t y : ys)
    for (std::size_t x : xs) {
      BiTemporalSample p;
      p.t1 = detail::crop_chw(sample.t1, y, x, size);
      p.t2 = detail::crop_chw(sample.t2, y, x, size);
      p.has_gt = sample.has_gt;
      if (sample.has_gt) {
        p.gt = MaskU8({size, size});
        for (std::size_t h = 0; h < size; ++h)
          for (std::size_t w = 0; w < size; ++w)
            p.gt.at(h, w) = sample.gt.at(y + h, x + w);
      }
      p.sample_id = sample.sample_id + "_y" + std::to_string(y) + "_x" +
                    std::to_string(x);
      out.push_back(std::move(p));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Directory loader: <root>/<split>/{A,B,label}/<name>.png, label optional.
// ---------------------------------------------------------------------------

inline std::vector<BiTemporalSample> load_pair_dataset(const DatasetManifest& m) {
  const fs::path base = m.root / m.split;
  const fs::path dir_a = base / "A", dir_b = base / "B", dir_l = base / "label";
  require(fs::is_directory(dir_a) && fs::is_directory(dir_b),
          ErrorClass::file_not_found,
          "dataset split missing A/B directories under " + base.string());
  const bool labeled = fs::is_directory(dir_l);

  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir_a))
    if (e.is_regular_file()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());

  std::vector<BiTemporalSample> out;
  for (const auto& name : names) {
    require(fs::exists(dir_b / name), ErrorClass::missing_counterpart,
            "t2 counterpart missing for " + name);
    if (labeled)
      require(fs::exists(dir_l / name), ErrorClass::missing_counterpart,
              "label counterpart missing for " + name);

    BiTemporalSample s;
    s.sample_id = fs::path(name).stem().string();
    const auto a = read_png(dir_a / name);
    const auto b = read_png(dir_b / name);
    require(a.shape() == b.shape(), ErrorClass::shape_mismatch,
            "t1/t2 shape mismatch for sample " + s.sample_id);
    require(a.dim(0) == m.channel_count, ErrorClass::shape_mismatch,
            "sample " + s.sample_id + " has " + std::to_string(a.dim(0)) +
                " channels, manifest expects " + std::to_string(m.channel_count));
    s.t1 = Tensor<float>(a.shape());
    s.t2 = Tensor<float>(b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
      s.t1[i] = float(a[i]) / 255.f;
      s.t2[i] = float(b[i]) / 255.f;
    }
    if (labeled) {
      const auto l = read_png(dir_l / name);
      require(l.dim(1) == a.dim(1) && l.dim(2) == a.dim(2),
              ErrorClass::shape_mismatch,
              "label shape mismatch for sample " + s.sample_id);
      s.has_gt = true;
      s.gt = MaskU8({l.dim(1), l.dim(2)});
      // any nonzero value in any channel counts as changed
      for (std::size_t h = 0; h < l.dim(1); ++h)
        for (std::size_t w = 0; w < l.dim(2); ++w) {
          std::uint8_t v = 0;
          for (std::size_t c = 0; c < l.dim(0); ++c)
            v |= (l.at(c, h, w) != 0);
          s.gt.at(h, w) = v;
        }
    }
    if (m.patch_size > 0 && (m.patch_size != s.height() || m.patch_size != s.width())) {
      for (auto& p : crop_patches(s, m.patch_size)) out.push_back(std::move(p));
    } else {
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic oracle: textured scenes with exactly known change masks. All
// construction happens in byte space, so regeneration, disk round-trips and
// the change/jitter separation are exact.
// ---------------------------------------------------------------------------

struct JitterConfig {
  float brightness = 0.08f;  // smooth photometric field amplitude
  float noise = 0.03f;       // per-pixel noise amplitude
};

struct SyntheticSceneConfig {
  std::size_t image_size = 128;
  std::size_t num_shapes = 6;  // static scene shapes present in both images
  JitterConfig irrelevant_jitter;
  float change_rate = 0.5f;
  std::uint64_t seed = 0;
  std::size_t num_samples = 100;
  std::size_t channels = 3;
  std::string id_prefix = "sample";
};

namespace synth_detail {

// byte-space palette; change shapes must out-contrast statics plus jitter
constexpr int kBackgroundLo = 38, kBackgroundHi = 140;  // 0.15 .. 0.55
constexpr int kStaticLo = 38, kStaticHi = 179;          // up to 0.70
constexpr int kChangeLo = 240, kChangeHi = 250;         // 0.94 .. 0.98

inline int jitter_bound_bytes(const JitterConfig& j) {
  return int(std::floor(double(j.brightness) * 255.0)) +
         int(std::floor(double(j.noise) * 255.0));
}

struct Shape {
  int kind;  // 0 rect, 1 circle, 2 triangle
  double p[6];
};

inline Shape random_shape(RngStream& rng, std::size_t size, double min_frac,
                          double max_frac) {
  Shape s;
  s.kind = int(rng.below(3));
  const double ext = double(size);
  const double d = rng.uniform(min_frac, max_frac) * ext;
  const double cy = rng.uniform(0.0, ext), cx = rng.uniform(0.0, ext);
  if (s.kind == 0) {
    const double d2 = rng.uniform(min_frac, max_frac) * ext;
    s.p[0] = cy - d / 2; s.p[1] = cx - d2 / 2; s.p[2] = cy + d / 2; s.p[3] = cx + d2 / 2;
  } else if (s.kind == 1) {
    s.p[0] = cy; s.p[1] = cx; s.p[2] = d / 2;
  } else {
    s.p[0] = cy; s.p[1] = cx;
    s.p[2] = cy + d * (rng.uniform() - 0.5) * 2; s.p[3] = cx + d;
    s.p[4] = cy + d; s.p[5] = cx + d * (rng.uniform() - 0.5) * 2;
  }
  return s;
}

inline bool inside(const Shape& s, double y, double x) {
  if (s.kind == 0) return y >= s.p[0] && y <= s.p[2] && x >= s.p[1] && x <= s.p[3];
  if (s.kind == 1) {
    const double dy = y - s.p[0], dx = x - s.p[1];
    return dy * dy + dx * dx <= s.p[2] * s.p[2];
  }
  auto side = [&](double ay, double ax, double by, double bx) {
    return (bx - ax) * (y - ay) - (by - ay) * (x - ax);
  };
  const double d1 = side(s.p[0], s.p[1], s.p[2], s.p[3]);
  const double d2 = side(s.p[2], s.p[3], s.p[4], s.p[5]);
  const double d3 = side(s.p[4], s.p[5], s.p[0], s.p[1]);
  const bool neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
  const bool pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
  return !(neg && pos);
}

/// Coarse random control grid, bilinearly interpolated; values in [-1, 1].
inline Tensor<float> smooth_field(std::size_t size, std::size_t grid,
                                  RngStream& rng) {
  Tensor<float> ctrl({grid, grid});
  for (auto& v : ctrl.vec()) v = float(rng.uniform(-1.0, 1.0));
  Tensor<float> ctrl3({1, grid, grid});
  std::copy_n(ctrl.data(), ctrl.size(), ctrl3.data());
  Tensor<float> up = bilinear_resize(ctrl3, size, size);
  Tensor<float> out({size, size});
  std::copy_n(up.data(), out.size(), out.data());
  return out;
}

}  // namespace synth_detail

/// Deterministic scene generator. t1 holds textured background plus static
/// shapes; t2 applies a bounded smooth photometric field and per-pixel noise
/// (irrelevant change) and, with probability change_rate, inserts or removes
/// high-contrast shapes whose exact footprint becomes gt_mask.
inline BiTemporalSample generate_synthetic_sample(const SyntheticSceneConfig& cfg,
                                                  std::size_t index) {
  using namespace synth_detail;
  const std::size_t S = cfg.image_size, C = cfg.channels;
  // id_prefix enters the key so train/test splits draw disjoint scenes
  RngStream rng = make_stream(cfg.seed, "synth_sample", fnv1a(cfg.id_prefix), index);

  Tensor<std::uint8_t> t1({C, S, S});
  for (std::size_t c = 0; c < C; ++c) {
    Tensor<float> bg = smooth_field(S, 5, rng);
    for (std::size_t h = 0; h < S; ++h)
      for (std::size_t w = 0; w < S; ++w) {
        const double v = (double(bg.at(h, w)) + 1.0) / 2.0;
        t1.at(c, h, w) = std::uint8_t(kBackgroundLo + v * (kBackgroundHi - kBackgroundLo));
      }
  }

  // static scene shapes, identical in both images
  for (std::size_t i = 0; i < cfg.num_shapes; ++i) {
    Shape sh = random_shape(rng, S, 0.08, 0.25);
    std::uint8_t col[3];
    for (std::size_t c = 0; c < C && c < 3; ++c)
      col[c] = std::uint8_t(kStaticLo + rng.below(kStaticHi - kStaticLo + 1));
    for (std::size_t h = 0; h < S; ++h)
      for (std::size_t w = 0; w < S; ++w)
        if (inside(sh, double(h), double(w)))
          for (std::size_t c = 0; c < C; ++c) t1.at(c, h, w) = col[c % 3];
  }

  // irrelevant change: smooth field (shared across channels, per-channel
  // scaled) plus pixel noise, all bounded in byte space
  const int bright_b = int(std::floor(double(cfg.irrelevant_jitter.brightness) * 255.0));
  const int noise_b = int(std::floor(double(cfg.irrelevant_jitter.noise) * 255.0));
  Tensor<float> field = smooth_field(S, 5, rng);
  std::vector<double> chan_scale(C);
  for (auto& v : chan_scale) v = rng.uniform(0.6, 1.0);

  Tensor<std::uint8_t> t2({C, S, S});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < S; ++h)
      for (std::size_t w = 0; w < S; ++w) {
        const double jit = double(bright_b) * chan_scale[c] * double(field.at(h, w)) +
                           double(noise_b) * rng.uniform(-1.0, 1.0);
        const int v = int(t1.at(c, h, w)) + int(std::lround(jit));
        t2.at(c, h, w) = std::uint8_t(std::clamp(v, 0, 255));
      }

  // relevant change: 1-3 inserted or removed bright shapes, disjoint footprints
  MaskU8 gt({S, S});
  if (rng.bernoulli(double(cfg.change_rate))) {
    const std::size_t n_changes = 1 + rng.below(3);
    for (std::size_t i = 0; i < n_changes; ++i) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        Shape sh = random_shape(rng, S, 0.12, 0.3);
        bool overlaps = false;
        std::vector<std::pair<std::size_t, std::size_t>> px;
        for (std::size_t h = 0; h < S && !overlaps; ++h)
          for (std::size_t w = 0; w < S; ++w)
            if (inside(sh, double(h), double(w))) {
              if (gt.at(h, w)) { overlaps = true; break; }
              px.emplace_back(h, w);
            }
        if (overlaps || px.empty()) continue;
        const bool removed = rng.bernoulli(0.5);
        std::uint8_t col[3];
        for (std::size_t c = 0; c < C && c < 3; ++c)
          col[c] = std::uint8_t(kChangeLo + rng.below(kChangeHi - kChangeLo + 1));
        auto& img = removed ? t1 : t2;
        for (const auto& [h, w] : px) {
          for (std::size_t c = 0; c < C; ++c) img.at(c, h, w) = col[c % 3];
          gt.at(h, w) = 1;
        }
        break;
      }
    }
  }

  BiTemporalSample s;
  s.sample_id = cfg.id_prefix + "_" + std::to_string(index);
  s.t1 = Tensor<float>({C, S, S});
  s.t2 = Tensor<float>({C, S, S});
  for (std::size_t i = 0; i < s.t1.size(); ++i) {
    s.t1[i] = float(t1[i]) / 255.f;
    s.t2[i] = float(t2[i]) / 255.f;
  }
  s.has_gt = true;
  s.gt = std::move(gt);
  return s;
}

inline std::vector<BiTemporalSample> generate_synthetic_dataset(
    const SyntheticSceneConfig& cfg) {
  require(cfg.change_rate >= 0.f && cfg.change_rate <= 1.f,
          ErrorClass::invalid_config, "change_rate must lie in [0,1]");
  require(cfg.image_size >= 32, ErrorClass::invalid_config,
          "synthetic image_size must be at least 32");
  // Jitter must stay strictly below the photometric contrast of change
  // shapes; removed shapes sit over jittered background, hence the factor 2.
  const int bound = synth_detail::jitter_bound_bytes(cfg.irrelevant_jitter);
  require(2 * bound < synth_detail::kChangeLo - synth_detail::kStaticHi,
          ErrorClass::invalid_config,
          "irrelevant_jitter amplitudes must stay below the change contrast");
  std::vector<BiTemporalSample> out;
  out.reserve(cfg.num_samples);
  for (std::size_t i = 0; i < cfg.num_samples; ++i)
    out.push_back(generate_synthetic_sample(cfg, i));
  return out;
}

// ---------------------------------------------------------------------------
// Paired augmentations (flip + axis-aligned rotation), each gated at p=0.3,
// applied jointly to t1, t2 and gt.
// ---------------------------------------------------------------------------

inline BiTemporalSample augment_pair(const BiTemporalSample& sample, RngStream& rng) {
  FlipAxis flip = FlipAxis::none;
  if (rng.bernoulli(0.3))
    flip = rng.bernoulli(0.5) ? FlipAxis::horizontal : FlipAxis::vertical;
  Rot90 rot = Rot90::none;
  if (rng.bernoulli(0.3)) {
    static constexpr Rot90 kRots[3] = {Rot90::r90, Rot90::r180, Rot90::r270};
    rot = kRots[rng.below(3)];
  }
  if (flip == FlipAxis::none && rot == Rot90::none) return sample;

  BiTemporalSample out;
  out.sample_id = sample.sample_id;
  out.t1 = transform_image(sample.t1, flip, rot);
  out.t2 = transform_image(sample.t2, flip, rot);
  out.has_gt = sample.has_gt;
  if (sample.has_gt) out.gt = transform_mask(sample.gt, flip, rot);
  return out;
}

// ---------------------------------------------------------------------------
// Disk layout emission: <root>/<split>/{A,B,label}/<id>.png (labels written
// as 0/255 for viewability).
// ---------------------------------------------------------------------------

inline void write_dataset_split(const fs::path& root, const std::string& split,
                                const std::vector<BiTemporalSample>& samples) {
  const fs::path base = root / split;
  fs::create_directories(base / "A");
  fs::create_directories(base / "B");
  fs::create_directories(base / "label");
  for (const auto& s : samples) {
    auto to_bytes = [](const Tensor<float>& img) {
      Tensor<std::uint8_t> b(img.shape());
      for (std::size_t i = 0; i < img.size(); ++i)
        b[i] = std::uint8_t(std::lround(std::clamp(img[i], 0.f, 1.f) * 255.f));
      return b;
    };
    write_png(base / "A" / (s.sample_id + ".png"), to_bytes(s.t1));
    write_png(base / "B" / (s.sample_id + ".png"), to_bytes(s.t2));
    Tensor<std::uint8_t> label({1, s.height(), s.width()});
    if (s.has_gt)
      for (std::size_t i = 0; i < s.gt.size(); ++i) label[i] = s.gt[i] ? 255 : 0;
    write_png(base / "label" / (s.sample_id + ".png"), label);
  }
}

}  // namespace mason
