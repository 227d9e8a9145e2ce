#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mason/encoder.hpp"
#include "mason/nn/layers.hpp"

namespace mason {

/// Elementwise feature difference, same layer ids as the inputs.
struct DifferenceSet {
  std::vector<int> layer_ids;
  std::vector<Tensor<float>> levels;
};

/// levels[l] = a[l] - b[l].
inline DifferenceSet fuse_difference(const FeatureSet& a, const FeatureSet& b) {
  require(a.layer_ids == b.layer_ids, ErrorClass::shape_mismatch,
          "fuse_difference: layer ids differ");
  DifferenceSet out;
  out.layer_ids = a.layer_ids;
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    require(a.levels[l].same_shape(b.levels[l]), ErrorClass::shape_mismatch,
            "fuse_difference: level shape mismatch at layer " +
                std::to_string(a.layer_ids[l]));
    out.levels.push_back(a.levels[l] - b.levels[l]);
  }
  return out;
}

/// Full-resolution logit map.
struct PredictionMap {
  Tensor<float> logits;  // (H, W)
};

/// sigmoid(logit) > 0.5, i.e. logit > 0 (strict; a logit of exactly zero maps
/// to background).
inline MaskU8 binarize(const PredictionMap& pred) {
  MaskU8 out({pred.logits.dim(0), pred.logits.dim(1)});
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = pred.logits[i] > 0.f ? 1 : 0;
  return out;
}

struct DecoderConfig {
  std::size_t width = 16;
  std::vector<std::size_t> ppm_scales = {1, 2, 3, 6};
  bool batch_norm = true;
  // The head starts at zero so early training only has to move the sign of
  // the logits, which is what the 0.5-sigmoid threshold reads.
  bool head_zero_init = true;
  // Fixed output gain on the logit head (scales logits, not the decision
  // boundary; mostly useful to shape early loss curvature).
  float head_gain = 1.f;
  // Background-prior initialization of the head bias: starts the operating
  // point below the 0.5-sigmoid threshold, which a short low-lr run cannot
  // reach from a symmetric start on its own.
  float head_bias_init = -0.05f;
};

/// Multi-level fusion decoder: lateral 1x1 projections to a common width,
/// pyramid pooling on the deepest level, top-down bilinear refinement, fused
/// concatenation and a single-logit head upsampled to image resolution.
///
/// Templated on the scalar so gradient checks can run in double precision.
template <typename T>
class UperNetDecoder {
 public:
  UperNetDecoder() = default;

  UperNetDecoder(std::vector<std::size_t> level_channels, DecoderConfig cfg,
                 RngStream& rng)
      : cfg_(cfg), level_channels_(std::move(level_channels)) {
    const std::size_t L = level_channels_.size();
    require(L >= 1, ErrorClass::invalid_config, "decoder needs at least one level");
    const std::size_t W = cfg_.width;
    const std::size_t deep_c = level_channels_.back();

    for (std::size_t i = 0; i < cfg_.ppm_scales.size(); ++i) {
      const auto tag = "ppm" + std::to_string(cfg_.ppm_scales[i]);
      ppm_pool_.emplace_back(cfg_.ppm_scales[i]);
      ppm_conv_.emplace_back(tag + ".conv", deep_c, W, 1, 1, 0);
      ppm_bn_.emplace_back(tag + ".bn", W);
      ppm_relu_.emplace_back();
      ppm_up_.emplace_back();
    }
    bottleneck_conv_ = nn::Conv2d<T>("bottleneck.conv",
                                     deep_c + cfg_.ppm_scales.size() * W, W, 3, 1, 1);
    bottleneck_bn_ = nn::BatchNorm2d<T>("bottleneck.bn", W);

    for (std::size_t l = 0; l + 1 < L; ++l) {
      const auto tag = "lateral" + std::to_string(l);
      lateral_conv_.emplace_back(tag + ".conv", level_channels_[l], W, 1, 1, 0);
      lateral_bn_.emplace_back(tag + ".bn", W);
      lateral_relu_.emplace_back();
      fpn_conv_.emplace_back("fpn" + std::to_string(l) + ".conv", W, W, 3, 1, 1);
      fpn_bn_.emplace_back("fpn" + std::to_string(l) + ".bn", W);
      fpn_relu_.emplace_back();
      td_up_.emplace_back();
      fuse_up_.emplace_back();
    }
    fusion_conv_ = nn::Conv2d<T>("fusion.conv", L * W, W, 3, 1, 1);
    fusion_bn_ = nn::BatchNorm2d<T>("fusion.bn", W);
    head_ = nn::Conv2d<T>("head", W, 1, 1, 1, 0);

    for (auto& c : ppm_conv_) c.init_he(rng);
    bottleneck_conv_.init_he(rng);
    for (auto& c : lateral_conv_) c.init_he(rng);
    for (auto& c : fpn_conv_) c.init_he(rng);
    fusion_conv_.init_he(rng);
    if (cfg_.head_zero_init)
      head_.init_zero();
    else
      head_.init_he(rng);
    head_.bias().fill(T(cfg_.head_bias_init));
  }

  const DecoderConfig& config() const { return cfg_; }
  const std::vector<std::size_t>& level_channels() const { return level_channels_; }

  /// levels: one (N, C_l, H_l, W_l) tensor per configured layer, fine to
  /// coarse. Returns (N, 1, img_h, img_w) logits.
  Tensor<T> forward(const std::vector<Tensor<T>>& levels, std::size_t img_h,
                    std::size_t img_w, bool training) {
    const std::size_t L = level_channels_.size();
    require(levels.size() == L, ErrorClass::shape_mismatch,
            "decoder expects " + std::to_string(L) + " levels, got " +
                std::to_string(levels.size()));
    for (std::size_t l = 0; l < L; ++l)
      require(levels[l].dim(1) == level_channels_[l], ErrorClass::shape_mismatch,
              "decoder level " + std::to_string(l) + " channel mismatch");
    training_ = training;

    // Pyramid pooling on the deepest level.
    const Tensor<T>& deep = levels[L - 1];
    const std::size_t dh = deep.dim(2), dw = deep.dim(3);
    ppm_branch_out_.clear();
    for (std::size_t i = 0; i < ppm_pool_.size(); ++i) {
      Tensor<T> t = ppm_pool_[i].forward(deep);
      t = ppm_conv_[i].forward(std::move(t));
      if (cfg_.batch_norm) t = ppm_bn_[i].forward(std::move(t), training);
      t = ppm_relu_[i].forward(t);
      ppm_up_[i] = nn::BilinearResize<T>(dh, dw);
      ppm_branch_out_.push_back(ppm_up_[i].forward(t));
    }
    std::vector<const Tensor<T>*> cat_parts{&deep};
    for (const auto& t : ppm_branch_out_) cat_parts.push_back(&t);
    Tensor<T> ppm_cat = nn::channel_concat(cat_parts);
    Tensor<T> p = bottleneck_conv_.forward(std::move(ppm_cat));
    if (cfg_.batch_norm) p = bottleneck_bn_.forward(std::move(p), training);
    p = bottleneck_relu_.forward(p);

    // Laterals and top-down pathway.
    merged_.assign(L, Tensor<T>());
    merged_[L - 1] = std::move(p);
    for (std::size_t l = L - 1; l-- > 0;) {
      Tensor<T> lat = lateral_conv_[l].forward(levels[l]);
      if (cfg_.batch_norm) lat = lateral_bn_[l].forward(std::move(lat), training);
      lat = lateral_relu_[l].forward(lat);
      td_up_[l] = nn::BilinearResize<T>(levels[l].dim(2), levels[l].dim(3));
      Tensor<T> up = td_up_[l].forward(merged_[l + 1]);
      merged_[l] = lat + up;
    }

    // Per-level FPN smoothing, then fuse everything at the finest grid.
    fpn_out_.assign(L, Tensor<T>());
    for (std::size_t l = 0; l + 1 < L; ++l) {
      // merged_[l] is only consumed here for l < L-1
      Tensor<T> f = fpn_conv_[l].forward(std::move(merged_[l]));
      if (cfg_.batch_norm) f = fpn_bn_[l].forward(std::move(f), training);
      fpn_out_[l] = fpn_relu_[l].forward(f);
    }
    fpn_out_[L - 1] = merged_[L - 1];

    const std::size_t fh = levels[0].dim(2), fw = levels[0].dim(3);
    fused_parts_.assign(L, Tensor<T>());
    fused_parts_[0] = fpn_out_[0];
    for (std::size_t l = 1; l < L; ++l) {
      fuse_up_[l - 1] = nn::BilinearResize<T>(fh, fw);
      fused_parts_[l] = fuse_up_[l - 1].forward(fpn_out_[l]);
    }
    std::vector<const Tensor<T>*> fuse_ptrs;
    for (auto& t : fused_parts_) fuse_ptrs.push_back(&t);
    Tensor<T> cat = nn::channel_concat(fuse_ptrs);
    Tensor<T> fused = fusion_conv_.forward(std::move(cat));
    if (cfg_.batch_norm) fused = fusion_bn_.forward(std::move(fused), training);
    fused = fusion_relu_.forward(fused);
    Tensor<T> logits = head_.forward(std::move(fused));
    logits *= T(cfg_.head_gain);
    out_up_ = nn::BilinearResize<T>(img_h, img_w);
    return out_up_.forward(logits);
  }

  /// Backward from d(logits); accumulates parameter gradients and returns
  /// per-level input gradients.
  std::vector<Tensor<T>> backward(const Tensor<T>& dlogits) {
    const std::size_t L = level_channels_.size();
    Tensor<T> d = out_up_.backward(dlogits);
    d *= T(cfg_.head_gain);
    d = head_.backward(d);
    d = fusion_relu_.backward(d);
    if (cfg_.batch_norm) d = fusion_bn_.backward(d);
    d = fusion_conv_.backward(d);
    std::vector<std::size_t> widths(L, cfg_.width);
    std::vector<Tensor<T>> dparts = nn::channel_split(d, widths);

    std::vector<Tensor<T>> dfpn(L);
    dfpn[0] = std::move(dparts[0]);
    for (std::size_t l = 1; l < L; ++l)
      dfpn[l] = fuse_up_[l - 1].backward(dparts[l]);

    // Reverse the top-down pathway, finest first. merged[l] feeds both the
    // fpn conv at l and the upsample into level l-1.
    std::vector<Tensor<T>> dlevels(L);
    std::vector<Tensor<T>> dmerged(L);
    for (std::size_t l = 0; l < L; ++l) {
      Tensor<T> dm;
      if (l + 1 < L) {
        Tensor<T> t = fpn_relu_[l].backward(dfpn[l]);
        if (cfg_.batch_norm) t = fpn_bn_[l].backward(t);
        dm = fpn_conv_[l].backward(t);
      } else {
        dm = dfpn[l];
      }
      if (l > 0) dm += td_up_[l - 1].backward(dmerged[l - 1]);
      dmerged[l] = std::move(dm);
      if (l + 1 < L) {
        Tensor<T> t = lateral_relu_[l].backward(dmerged[l]);
        if (cfg_.batch_norm) t = lateral_bn_[l].backward(t);
        dlevels[l] = lateral_conv_[l].backward(t);
      }
    }

    // PPM backward into the deepest level.
    Tensor<T> dp = bottleneck_relu_.backward(dmerged[L - 1]);
    if (cfg_.batch_norm) dp = bottleneck_bn_.backward(dp);
    dp = bottleneck_conv_.backward(dp);
    std::vector<std::size_t> cat_channels{level_channels_.back()};
    for (std::size_t i = 0; i < ppm_pool_.size(); ++i)
      cat_channels.push_back(cfg_.width);
    std::vector<Tensor<T>> dcat = nn::channel_split(dp, cat_channels);
    Tensor<T> ddeep = std::move(dcat[0]);
    for (std::size_t i = 0; i < ppm_pool_.size(); ++i) {
      Tensor<T> t = ppm_up_[i].backward(dcat[i + 1]);
      t = ppm_relu_[i].backward(t);
      if (cfg_.batch_norm) t = ppm_bn_[i].backward(t);
      t = ppm_conv_[i].backward(t);
      ddeep += ppm_pool_[i].backward(t);
    }
    dlevels[L - 1] = std::move(ddeep);
    return dlevels;
  }

  std::vector<nn::ParamRef<T>> params() {
    std::vector<nn::ParamRef<T>> out;
    for (auto& c : ppm_conv_) c.collect_params(out);
    if (cfg_.batch_norm)
      for (auto& b : ppm_bn_) b.collect_params(out);
    bottleneck_conv_.collect_params(out);
    if (cfg_.batch_norm) bottleneck_bn_.collect_params(out);
    for (auto& c : lateral_conv_) c.collect_params(out);
    if (cfg_.batch_norm)
      for (auto& b : lateral_bn_) b.collect_params(out);
    for (auto& c : fpn_conv_) c.collect_params(out);
    if (cfg_.batch_norm)
      for (auto& b : fpn_bn_) b.collect_params(out);
    fusion_conv_.collect_params(out);
    if (cfg_.batch_norm) fusion_bn_.collect_params(out);
    head_.collect_params(out);
    return out;
  }

  std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    if (!cfg_.batch_norm) return out;
    for (auto& b : ppm_bn_) b.collect_buffers(out);
    bottleneck_bn_.collect_buffers(out);
    for (auto& b : lateral_bn_) b.collect_buffers(out);
    for (auto& b : fpn_bn_) b.collect_buffers(out);
    fusion_bn_.collect_buffers(out);
    return out;
  }

 private:
  DecoderConfig cfg_;
  std::vector<std::size_t> level_channels_;
  bool training_ = true;

  std::vector<nn::AdaptiveAvgPool<T>> ppm_pool_;
  std::vector<nn::Conv2d<T>> ppm_conv_;
  std::vector<nn::BatchNorm2d<T>> ppm_bn_;
  std::vector<nn::ReLU<T>> ppm_relu_;
  std::vector<nn::BilinearResize<T>> ppm_up_;
  nn::Conv2d<T> bottleneck_conv_;
  nn::BatchNorm2d<T> bottleneck_bn_;
  nn::ReLU<T> bottleneck_relu_;
  std::vector<nn::Conv2d<T>> lateral_conv_;
  std::vector<nn::BatchNorm2d<T>> lateral_bn_;
  std::vector<nn::ReLU<T>> lateral_relu_;
  std::vector<nn::Conv2d<T>> fpn_conv_;
  std::vector<nn::BatchNorm2d<T>> fpn_bn_;
  std::vector<nn::ReLU<T>> fpn_relu_;
  std::vector<nn::BilinearResize<T>> td_up_;
  std::vector<nn::BilinearResize<T>> fuse_up_;
  nn::Conv2d<T> fusion_conv_;
  nn::BatchNorm2d<T> fusion_bn_;
  nn::ReLU<T> fusion_relu_;
  nn::Conv2d<T> head_;
  nn::BilinearResize<T> out_up_;

  // forward caches for the graph glue
  std::vector<Tensor<T>> ppm_branch_out_;
  std::vector<Tensor<T>> merged_;
  std::vector<Tensor<T>> fpn_out_;
  std::vector<Tensor<T>> fused_parts_;
};

}  // namespace mason
