#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "mason/image.hpp"
#include "mason/perlin.hpp"
#include "mason/quantile.hpp"
#include "mason/rng.hpp"
#include "mason/tensor.hpp"

namespace mason {

enum class MaskStrategy { perlin, rectangles, none };
enum class NoiseDist { gaussian, laplace };

struct ChangeGenConfig {
  // learnable quantile initial values
  float q_init_irrelevant = 0.85f;
  float q_init_relevant = 0.98f;
  SamplingDim sampling_dim = SamplingDim::per_channel_in_batch;
  MaskStrategy mask_strategy = MaskStrategy::perlin;
  NoiseDist noise_dist_irrelevant = NoiseDist::gaussian;
  NoiseDist noise_dist_relevant = NoiseDist::gaussian;
  float irrelevant_gate_p = 0.5f;
  float relevant_gate_p = 0.5f;
  // dynamic=false freezes the scales at the fixed constants below
  bool dynamic = true;
  float fixed_sigma_irrelevant = 0.015f;
  float fixed_sigma_relevant = 0.1f;
  // empty = inject noise at every configured layer
  std::vector<int> noise_layers;
  float perlin_threshold = 0.5f;
  std::size_t perlin_cell_divisor = 8;
  // quantile of |values| instead of signed values in the relevant estimator
  bool abs_relevant = false;
  // ablation arm: apply the recipe to image pixels instead of features
  bool pixel_space = false;

  bool validate(std::string* why = nullptr) const {
    auto fail = [&](const char* msg) {
      if (why) *why = msg;
      return false;
    };
    if (!(q_init_irrelevant > 0.f && q_init_irrelevant < 1.f))
      return fail("q_init_irrelevant must lie in (0,1)");
    if (!(q_init_relevant > 0.f && q_init_relevant < 1.f))
      return fail("q_init_relevant must lie in (0,1)");
    if (irrelevant_gate_p < 0.f || irrelevant_gate_p > 1.f)
      return fail("irrelevant_gate_p must lie in [0,1]");
    if (relevant_gate_p < 0.f || relevant_gate_p > 1.f)
      return fail("relevant_gate_p must lie in [0,1]");
    if (fixed_sigma_irrelevant < 0.f || fixed_sigma_relevant < 0.f)
      return fail("fixed sigma constants must be >= 0");
    if (perlin_cell_divisor == 0) return fail("perlin_cell_divisor must be > 0");
    return true;
  }
};

/// Binary relevant-change mask at image resolution plus its counterpart at
/// each feature resolution (shared box-average + 0.5 rethreshold rule).
struct ChangeMask {
  MaskU8 image_res;
  std::vector<int> layer_ids;
  std::vector<MaskU8> feature_res;
};

struct LevelShape {
  int layer_id;
  std::size_t channels, h, w;
};

inline ChangeMask make_change_mask(MaskU8 image_mask,
                                   const std::vector<LevelShape>& levels) {
  ChangeMask out;
  out.image_res = std::move(image_mask);
  for (const auto& lv : levels) {
    out.layer_ids.push_back(lv.layer_id);
    out.feature_res.push_back(downscale_binary_mask(out.image_res, lv.h, lv.w));
  }
  return out;
}

inline ChangeMask sample_perlin_mask(std::size_t height, std::size_t width,
                                     float threshold, std::size_t cell,
                                     RngStream& rng,
                                     const std::vector<LevelShape>& levels = {}) {
  return make_change_mask(perlin_mask(height, width, cell, threshold, rng), levels);
}

inline ChangeMask sample_rectangle_mask(std::size_t height, std::size_t width,
                                        std::size_t min_side, RngStream& rng,
                                        const std::vector<LevelShape>& levels = {},
                                        std::vector<MaskRect>* rects_out = nullptr) {
  RectangleMask rm = rectangle_mask(height, width, min_side, rng);
  if (rects_out) *rects_out = rm.rects;
  return make_change_mask(std::move(rm.mask), levels);
}

/// Unit-scale noise draw for the configured distribution; sigma * draw has
/// standard deviation sigma for both arms.
inline double sample_noise_unit(NoiseDist dist, RngStream& rng) {
  return dist == NoiseDist::gaussian ? rng.normal() : rng.laplace_unit();
}

/// Batched feature hierarchy: one (N, C_l, H_l, W_l) tensor per layer.
struct BatchedFeatures {
  std::vector<int> layer_ids;
  std::vector<Tensor<float>> levels;

  std::size_t batch() const { return levels.empty() ? 0 : levels[0].dim(0); }
  std::vector<LevelShape> shapes() const {
    std::vector<LevelShape> out;
    for (std::size_t l = 0; l < levels.size(); ++l)
      out.push_back({layer_ids[l], levels[l].dim(1), levels[l].dim(2), levels[l].dim(3)});
    return out;
  }
};

/// One synthesized training pair covering a whole batch. `perturbed` follows
/// Eq.-style assembly: f + g_I * sigma_I * z_I + M (.) g_R * sigma_R * z_R,
/// with per-item Bernoulli gates and per-item masks. Everything needed for
/// the backward pass into q_I / q_R is kept.
struct SynthesizedPair {
  std::vector<Tensor<float>> perturbed;      // per level (N,C,H,W)
  std::vector<Tensor<float>> z_irrelevant;   // per level (N,C,H,W)
  std::vector<Tensor<float>> z_relevant;     // per level (N,C,H,W)
  std::vector<Tensor<float>> feature_masks;  // per level (N,H_l,W_l), {0,1}
  std::vector<std::uint8_t> noised_level;    // per level flag (noise_layers)
  Tensor<float> targets;                     // (N, img_h, img_w), {0,1}
  std::vector<std::uint8_t> gate_irrelevant; // per item
  std::vector<std::uint8_t> gate_relevant;   // per item
};

struct ChangeGenStep {
  std::vector<NoiseScales<float>> sigma_irrelevant;  // per level
  std::vector<NoiseScales<float>> sigma_relevant;    // per level
  SynthesizedPair pairs[2];
};

namespace detail {

inline NoiseScales<float> fixed_scales(float value, std::size_t batch,
                                       std::size_t channels) {
  NoiseScales<float> s;
  s.dim = SamplingDim::per_batch;
  s.batch = batch;
  s.channels = channels;
  s.sigma = {value};
  s.dsigma_dq = {0.f};
  return s;
}

inline MaskU8 sample_image_mask(const ChangeGenConfig& cfg, std::size_t img_h,
                                std::size_t img_w, std::size_t coarsest_h,
                                RngStream& rng) {
  switch (cfg.mask_strategy) {
    case MaskStrategy::perlin: {
      const std::size_t cell =
          std::max<std::size_t>(1, std::min(img_h, img_w) / cfg.perlin_cell_divisor);
      return perlin_mask(img_h, img_w, cell, cfg.perlin_threshold, rng);
    }
    case MaskStrategy::rectangles: {
      const std::size_t min_side =
          std::max<std::size_t>(1, img_h / std::max<std::size_t>(1, coarsest_h));
      return rectangle_mask(img_h, img_w, min_side, rng).mask;
    }
    case MaskStrategy::none:
      // no spatial structure: the whole map counts as changed when gated on
      return MaskU8::full({img_h, img_w}, 1);
  }
  return MaskU8({img_h, img_w});
}

}  // namespace detail

/// Synthesize the two training pairs of one step from the batch features of
/// both time steps. Scales are estimated once from (f1, f2); masks, gates and
/// noise draws are independent per pair and per batch item, keyed by
/// (seed, step, pair, item) so batch items can be processed in any order.
inline ChangeGenStep synthesize_pairs(const BatchedFeatures& f1,
                                      const BatchedFeatures& f2,
                                      const ChangeGenConfig& cfg, float q_irrelevant,
                                      float q_relevant, std::uint64_t seed,
                                      std::uint64_t step, std::size_t img_h,
                                      std::size_t img_w) {
  require(f1.layer_ids == f2.layer_ids, ErrorClass::shape_mismatch,
          "synthesize_pairs: layer ids differ");
  const std::size_t L = f1.levels.size();
  const std::size_t N = f1.batch();
  ChangeGenStep out;

  for (std::size_t l = 0; l < L; ++l) {
    require(f1.levels[l].same_shape(f2.levels[l]), ErrorClass::shape_mismatch,
            "synthesize_pairs: level shape mismatch");
    if (cfg.dynamic) {
      out.sigma_irrelevant.push_back(estimate_sigma_irrelevant(
          f1.levels[l], f2.levels[l], q_irrelevant, cfg.sampling_dim));
      out.sigma_relevant.push_back(estimate_sigma_relevant(
          f1.levels[l], f2.levels[l], q_relevant, cfg.sampling_dim, cfg.abs_relevant));
    } else {
      out.sigma_irrelevant.push_back(detail::fixed_scales(
          cfg.fixed_sigma_irrelevant, N, f1.levels[l].dim(1)));
      out.sigma_relevant.push_back(detail::fixed_scales(
          cfg.fixed_sigma_relevant, N, f1.levels[l].dim(1)));
    }
  }

  const auto shapes = f1.shapes();
  std::size_t coarsest_h = img_h;
  for (const auto& s : shapes) coarsest_h = std::min(coarsest_h, s.h);

  for (int pair = 0; pair < 2; ++pair) {
    const BatchedFeatures& src = pair == 0 ? f1 : f2;
    SynthesizedPair& sp = out.pairs[pair];
    sp.targets = Tensor<float>({N, img_h, img_w});
    sp.gate_irrelevant.resize(N);
    sp.gate_relevant.resize(N);
    sp.noised_level.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
      const bool noised = cfg.noise_layers.empty() ||
                          std::find(cfg.noise_layers.begin(), cfg.noise_layers.end(),
                                    f1.layer_ids[l]) != cfg.noise_layers.end();
      sp.noised_level[l] = noised ? 1 : 0;
      sp.perturbed.push_back(src.levels[l]);
      // z buffers are only read where the corresponding gate (and mask)
      // made the noise land, so they can stay uninitialized elsewhere
      sp.z_irrelevant.push_back(
          noised ? Tensor<float>::uninitialized(src.levels[l].shape())
                 : Tensor<float>({0}));
      sp.z_relevant.push_back(
          noised ? Tensor<float>::uninitialized(src.levels[l].shape())
                 : Tensor<float>({0}));
      sp.feature_masks.emplace_back(
          std::vector<std::size_t>{N, shapes[l].h, shapes[l].w});
    }

    // Batch items are independent: each draws from streams keyed by
    // (seed, step, pair, item), so this loop parallelizes without changing
    // any value. Noise is only drawn where a gate (and, for relevant noise,
    // the mask) makes it land; undrawn entries stay zero.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t nn = 0; nn < std::ptrdiff_t(N); ++nn) {
      const std::size_t n = std::size_t(nn);
      RngStream gate_rng = make_stream(seed, "changegen_gates", step,
                                       std::uint64_t(pair), n);
      const bool g_irrel = gate_rng.bernoulli(double(cfg.irrelevant_gate_p));
      const bool g_rel = gate_rng.bernoulli(double(cfg.relevant_gate_p));
      sp.gate_irrelevant[n] = g_irrel ? 1 : 0;
      sp.gate_relevant[n] = g_rel ? 1 : 0;

      RngStream mask_rng = make_stream(seed, "changegen_mask", step,
                                       std::uint64_t(pair), n);
      MaskU8 image_mask =
          detail::sample_image_mask(cfg, img_h, img_w, coarsest_h, mask_rng);
      for (std::size_t l = 0; l < L; ++l) {
        MaskU8 fmask = downscale_binary_mask(image_mask, shapes[l].h, shapes[l].w);
        float* dst = sp.feature_masks[l].data() + n * shapes[l].h * shapes[l].w;
        for (std::size_t i = 0; i < fmask.size(); ++i) dst[i] = float(fmask[i]);
      }
      if (g_rel) {
        float* t = sp.targets.data() + n * img_h * img_w;
        for (std::size_t i = 0; i < image_mask.size(); ++i) t[i] = float(image_mask[i]);
      }
      if (!g_irrel && !g_rel) continue;

      RngStream z_rng = make_stream(seed, "changegen_noise", step,
                                    std::uint64_t(pair), n);
      for (std::size_t l = 0; l < L; ++l) {
        if (!sp.noised_level[l]) continue;
        const std::size_t C = shapes[l].channels, HW = shapes[l].h * shapes[l].w;
        const auto& sig_i = out.sigma_irrelevant[l];
        const auto& sig_r = out.sigma_relevant[l];
        float* pert = sp.perturbed[l].data() + n * C * HW;
        float* zi = sp.z_irrelevant[l].data() + n * C * HW;
        float* zr = sp.z_relevant[l].data() + n * C * HW;
        const float* fm = sp.feature_masks[l].data() + n * HW;
        for (std::size_t c = 0; c < C; ++c) {
          const float si = sig_i.sigma[sig_i.group_of(n, c)];
          const float sr = sig_r.sigma[sig_r.group_of(n, c)];
          for (std::size_t i = 0; i < HW; ++i) {
            float v = 0.f;
            if (g_irrel) {
              const float z1 =
                  float(sample_noise_unit(cfg.noise_dist_irrelevant, z_rng));
              zi[c * HW + i] = z1;
              v += si * z1;
            }
            if (g_rel && fm[i] != 0.f) {
              const float z2 =
                  float(sample_noise_unit(cfg.noise_dist_relevant, z_rng));
              zr[c * HW + i] = z2;
              v += sr * z2;
            }
            pert[c * HW + i] += v;
          }
        }
      }
    }
  }
  return out;
}

/// Accumulate d(loss)/d(q) given the gradient w.r.t. the decoder input
/// diff = original - perturbed (so d diff / d noise = -1).
inline void accumulate_quantile_grads(const SynthesizedPair& sp,
                                      const std::vector<NoiseScales<float>>& sigma_irrel,
                                      const std::vector<NoiseScales<float>>& sigma_rel,
                                      const std::vector<Tensor<float>>& ddiff,
                                      double& dq_irrelevant, double& dq_relevant) {
  for (std::size_t l = 0; l < ddiff.size(); ++l) {
    if (!sp.noised_level[l]) continue;
    const auto& d = ddiff[l];
    const std::size_t N = d.dim(0), C = d.dim(1), HW = d.dim(2) * d.dim(3);
    const auto& sig_i = sigma_irrel[l];
    const auto& sig_r = sigma_rel[l];
    for (std::size_t n = 0; n < N; ++n) {
      const bool g_irrel = sp.gate_irrelevant[n];
      const bool g_rel = sp.gate_relevant[n];
      if (!g_irrel && !g_rel) continue;
      const float* zi = sp.z_irrelevant[l].data() + n * C * HW;
      const float* zr = sp.z_relevant[l].data() + n * C * HW;
      const float* fm = sp.feature_masks[l].data() + n * HW;
      const float* dd = d.data() + n * C * HW;
      for (std::size_t c = 0; c < C; ++c) {
        const float dsi = sig_i.dsigma_dq[sig_i.group_of(n, c)];
        const float dsr = sig_r.dsigma_dq[sig_r.group_of(n, c)];
        double acc_i = 0, acc_r = 0;
        for (std::size_t i = 0; i < HW; ++i) {
          const double dnoise = -double(dd[c * HW + i]);
          if (g_irrel) acc_i += dnoise * double(zi[c * HW + i]);
          if (g_rel && fm[i] != 0.f) acc_r += dnoise * double(zr[c * HW + i]);
        }
        dq_irrelevant += acc_i * double(dsi);
        dq_relevant += acc_r * double(dsr);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pixel-space ablation arm: the same recipe applied to image pixels, scales
// estimated from pixel statistics, output clipped back to [0, 1].
// ---------------------------------------------------------------------------

struct PixelSpacePair {
  Tensor<float> perturbed;  // (N, C, H, W)
  Tensor<float> targets;    // (N, H, W)
  std::vector<std::uint8_t> gate_irrelevant, gate_relevant;
};

inline PixelSpacePair pixel_space_perturb(const Tensor<float>& images,
                                          const Tensor<float>& other_images,
                                          const ChangeGenConfig& cfg,
                                          float q_irrelevant, float q_relevant,
                                          std::uint64_t seed, std::uint64_t step,
                                          std::uint64_t pair_index) {
  const std::size_t N = images.dim(0), C = images.dim(1);
  const std::size_t H = images.dim(2), W = images.dim(3);
  NoiseScales<float> sig_i, sig_r;
  if (cfg.dynamic) {
    sig_i = estimate_sigma_irrelevant(images, other_images, q_irrelevant,
                                      cfg.sampling_dim);
    sig_r = estimate_sigma_relevant(images, other_images, q_relevant,
                                    cfg.sampling_dim, cfg.abs_relevant);
  } else {
    sig_i = detail::fixed_scales(cfg.fixed_sigma_irrelevant, N, C);
    sig_r = detail::fixed_scales(cfg.fixed_sigma_relevant, N, C);
  }

  PixelSpacePair out;
  out.perturbed = images;
  out.targets = Tensor<float>({N, H, W});
  out.gate_irrelevant.resize(N);
  out.gate_relevant.resize(N);
  for (std::size_t n = 0; n < N; ++n) {
    RngStream gate_rng = make_stream(seed, "changegen_gates", step, pair_index, n);
    const bool g_irrel = gate_rng.bernoulli(double(cfg.irrelevant_gate_p));
    const bool g_rel = gate_rng.bernoulli(double(cfg.relevant_gate_p));
    out.gate_irrelevant[n] = g_irrel ? 1 : 0;
    out.gate_relevant[n] = g_rel ? 1 : 0;

    RngStream mask_rng = make_stream(seed, "changegen_mask", step, pair_index, n);
    MaskU8 mask = detail::sample_image_mask(cfg, H, W, H / 16, mask_rng);
    if (g_rel) {
      float* t = out.targets.data() + n * H * W;
      for (std::size_t i = 0; i < mask.size(); ++i) t[i] = float(mask[i]);
    }

    RngStream z_rng = make_stream(seed, "changegen_noise", step, pair_index, n);
    for (std::size_t c = 0; c < C; ++c) {
      const float si = sig_i.sigma[sig_i.group_of(n, c)];
      const float sr = sig_r.sigma[sig_r.group_of(n, c)];
      float* p = out.perturbed.data() + (n * C + c) * H * W;
      for (std::size_t i = 0; i < H * W; ++i) {
        const float z1 = float(sample_noise_unit(cfg.noise_dist_irrelevant, z_rng));
        const float z2 = float(sample_noise_unit(cfg.noise_dist_relevant, z_rng));
        float v = p[i];
        if (g_irrel) v += si * z1;
        if (g_rel) v += float(mask[i]) * sr * z2;
        p[i] = std::clamp(v, 0.f, 1.f);
      }
    }
  }
  return out;
}

}  // namespace mason
