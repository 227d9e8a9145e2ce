#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mason/nn/layers.hpp"
#include "mason/rng.hpp"
#include "mason/serialize.hpp"
#include "mason/tensor.hpp"

namespace mason {

/// Hierarchical feature set for one image: one (C, H, W) map per layer id,
/// layer ids strictly increasing.
struct FeatureSet {
  std::vector<int> layer_ids;
  std::vector<Tensor<float>> levels;

  std::size_t level_count() const { return levels.size(); }
};

struct LevelMeta {
  int layer_id;
  std::size_t channels;
  std::size_t stride;
};

enum class WeightSource { fixed_random, external_checkpoint };

struct EncoderSpec {
  std::string adapter = "desk_cnn";
  std::vector<int> layer_ids = {1, 2, 3, 4};
  std::size_t in_channels = 3;
  WeightSource weight_source = WeightSource::fixed_random;
  std::uint64_t weight_seed = 7;
  std::string checkpoint_path;
  std::vector<float> norm_mean;  // empty: identity normalization
  std::vector<float> norm_std;
};

namespace detail {

/// Stateless convolution forward (no gradient, no input cache), safe for
/// concurrent use over frozen weights.
inline Tensor<float> conv_forward(const Tensor<float>& x, const Tensor<float>& weight,
                                  const Tensor<float>& bias, std::size_t in_ch,
                                  std::size_t out_ch, std::size_t k,
                                  std::size_t stride, std::size_t pad) {
  const std::size_t H = x.dim(1), W = x.dim(2);
  const std::size_t oh = (H + 2 * pad - k) / stride + 1;
  const std::size_t ow = (W + 2 * pad - k) / stride + 1;
  const std::size_t rows = in_ch * k * k, plane = oh * ow;
  std::vector<float> cols(rows * plane);
  nn::detail::im2col(x.data(), in_ch, H, W, k, stride, pad, oh, ow, cols.data());
  Tensor<float> y({out_ch, oh, ow});
  nn::detail::ConstMatMap<float> wm(weight.data(), out_ch, rows);
  nn::detail::ConstMatMap<float> cm(cols.data(), rows, plane);
  nn::detail::MatMap<float> ym(y.data(), out_ch, plane);
  ym.noalias() = wm * cm;
  for (std::size_t c = 0; c < out_ch; ++c) ym.row(c).array() += bias[c];
  return y;
}

inline void leaky_relu_inplace(Tensor<float>& t, float slope = 0.1f) {
  for (auto& v : t.vec())
    if (v < 0) v *= slope;
}

}  // namespace detail

/// Frozen feature extractor interface. Implementations own immutable weights;
/// extract() is const and safe for concurrent calls.
class EncoderAdapter {
 public:
  virtual ~EncoderAdapter() = default;
  virtual std::string name() const = 0;
  virtual std::vector<LevelMeta> available_levels() const = 0;
  virtual Tensor<float> run_level(const Tensor<float>& image, int layer_id) const = 0;
  virtual std::vector<NamedTensor> named_weights() const = 0;
  virtual void load_named_weights(const std::vector<NamedTensor>& weights) = 0;
  virtual std::size_t in_channels() const = 0;
};

/// Desk-scale adapter: a fixed-random four-stage convolutional pyramid with
/// strides 4/8/16/16. It stands in for a pretrained backbone in self-contained
/// runs; weights are seeded and never trained.
class DeskCnnAdapter : public EncoderAdapter {
 public:
  explicit DeskCnnAdapter(std::size_t in_channels, std::uint64_t seed)
      : in_ch_(in_channels) {
    const std::size_t chans[4] = {16, 32, 64, 64};
    const std::size_t kernels[4] = {7, 3, 3, 3};
    RngStream rng = make_stream(seed, "desk_cnn_weights");
    std::size_t prev = in_ch_;
    for (int s = 0; s < 4; ++s) {
      weights_[s] = Tensor<float>({chans[s], prev * kernels[s] * kernels[s]});
      biases_[s] = Tensor<float>({chans[s]});
      const double std = std::sqrt(2.0 / double(prev * kernels[s] * kernels[s]));
      for (auto& w : weights_[s].vec()) w = float(rng.normal() * std);
      prev = chans[s];
    }
  }

  std::string name() const override { return "desk_cnn"; }
  std::size_t in_channels() const override { return in_ch_; }

  std::vector<LevelMeta> available_levels() const override {
    return {{1, 16, 4}, {2, 32, 8}, {3, 64, 16}, {4, 64, 16}};
  }

  Tensor<float> run_level(const Tensor<float>& image, int layer_id) const override {
    Tensor<float> x = stage(image, 0);
    if (layer_id == 1) return x;
    x = stage(x, 1);
    if (layer_id == 2) return x;
    x = stage(x, 2);
    if (layer_id == 3) return x;
    x = stage(x, 3);
    return x;
  }

  /// All four stages in one pass; avoids recomputing the trunk per level.
  std::vector<Tensor<float>> run_all(const Tensor<float>& image) const {
    std::vector<Tensor<float>> out;
    Tensor<float> x = image;
    for (int s = 0; s < 4; ++s) {
      x = stage(x, s);
      out.push_back(x);
    }
    return out;
  }

  std::vector<NamedTensor> named_weights() const override {
    std::vector<NamedTensor> out;
    for (int s = 0; s < 4; ++s) {
      out.push_back({"stage" + std::to_string(s + 1) + ".weight", weights_[s]});
      out.push_back({"stage" + std::to_string(s + 1) + ".bias", biases_[s]});
    }
    return out;
  }

  void load_named_weights(const std::vector<NamedTensor>& weights) override {
    for (int s = 0; s < 4; ++s) {
      weights_[s] = find(weights, "stage" + std::to_string(s + 1) + ".weight",
                         weights_[s].shape());
      biases_[s] = find(weights, "stage" + std::to_string(s + 1) + ".bias",
                        biases_[s].shape());
    }
  }

 private:
  static Tensor<float> find(const std::vector<NamedTensor>& ts,
                            const std::string& name,
                            const std::vector<std::size_t>& shape) {
    for (const auto& t : ts)
      if (t.name == name) {
        require(t.tensor.shape() == shape, ErrorClass::shape_mismatch,
                "encoder checkpoint tensor " + name + " has wrong shape");
        return t.tensor;
      }
    raise(ErrorClass::io_failure, "encoder checkpoint missing tensor " + name);
  }

  Tensor<float> stage(const Tensor<float>& x, int s) const {
    static constexpr std::size_t kKernel[4] = {7, 3, 3, 3};
    static constexpr std::size_t kStride[4] = {4, 2, 2, 1};
    static constexpr std::size_t kPad[4] = {3, 1, 1, 1};
    const std::size_t in_ch = x.dim(0);
    const std::size_t out_ch = weights_[s].dim(0);
    Tensor<float> y = detail::conv_forward(x, weights_[s], biases_[s], in_ch,
                                           out_ch, kKernel[s], kStride[s], kPad[s]);
    detail::leaky_relu_inplace(y);
    return y;
  }

  std::size_t in_ch_;
  Tensor<float> weights_[4], biases_[4];
};

/// Minimal ViT-style adapter: 16x16 patch embedding followed by pre-norm
/// transformer blocks; every level keeps the constant 1/16 token grid. Only
/// patch tokens exist in this implementation, so checkpoints produced
/// elsewhere must be exported without CLS/register tokens.
class ViTAdapter : public EncoderAdapter {
 public:
  ViTAdapter(std::size_t in_channels, std::uint64_t seed, std::size_t dim = 64,
             std::size_t depth = 4, std::size_t heads = 4)
      : in_ch_(in_channels), dim_(dim), depth_(depth), heads_(heads) {
    RngStream rng = make_stream(seed, "vit_weights");
    auto randn = [&](Tensor<float>& t, double std) {
      for (auto& v : t.vec()) v = float(rng.normal() * std);
    };
    patch_w_ = Tensor<float>({dim_, in_ch_ * kPatch * kPatch});
    patch_b_ = Tensor<float>({dim_});
    randn(patch_w_, std::sqrt(2.0 / double(in_ch_ * kPatch * kPatch)));
    blocks_.resize(depth_);
    for (auto& b : blocks_) {
      b.ln1_g = Tensor<float>::full({dim_}, 1.f);
      b.ln1_b = Tensor<float>({dim_});
      b.ln2_g = Tensor<float>::full({dim_}, 1.f);
      b.ln2_b = Tensor<float>({dim_});
      b.qkv_w = Tensor<float>({3 * dim_, dim_});
      b.qkv_b = Tensor<float>({3 * dim_});
      b.proj_w = Tensor<float>({dim_, dim_});
      b.proj_b = Tensor<float>({dim_});
      b.fc1_w = Tensor<float>({4 * dim_, dim_});
      b.fc1_b = Tensor<float>({4 * dim_});
      b.fc2_w = Tensor<float>({dim_, 4 * dim_});
      b.fc2_b = Tensor<float>({dim_});
      randn(b.qkv_w, std::sqrt(1.0 / double(dim_)));
      randn(b.proj_w, std::sqrt(1.0 / double(dim_)));
      randn(b.fc1_w, std::sqrt(2.0 / double(dim_)));
      randn(b.fc2_w, std::sqrt(2.0 / double(4 * dim_)));
    }
  }

  std::string name() const override { return "vit"; }
  std::size_t in_channels() const override { return in_ch_; }

  std::vector<LevelMeta> available_levels() const override {
    std::vector<LevelMeta> out;
    for (std::size_t i = 1; i <= depth_; ++i)
      out.push_back({int(i), dim_, kPatch});
    return out;
  }

  Tensor<float> run_level(const Tensor<float>& image, int layer_id) const override {
    return run_all(image)[std::size_t(layer_id) - 1];
  }

  std::vector<Tensor<float>> run_all(const Tensor<float>& image) const {
    const std::size_t H = image.dim(1), W = image.dim(2);
    const std::size_t gh = H / kPatch, gw = W / kPatch, n_tok = gh * gw;
    Tensor<float> emb = detail::conv_forward(image, patch_w_, patch_b_, in_ch_,
                                             dim_, kPatch, kPatch, 0);
    // tokens: (n_tok, dim), row-major
    Eigen::MatrixXf tok(n_tok, dim_);
    for (std::size_t d = 0; d < dim_; ++d)
      for (std::size_t t = 0; t < n_tok; ++t)
        tok(Eigen::Index(t), Eigen::Index(d)) = emb[d * n_tok + t];

    std::vector<Tensor<float>> out;
    for (const auto& b : blocks_) {
      tok = run_block(b, tok);
      Tensor<float> level({dim_, gh, gw});
      for (std::size_t d = 0; d < dim_; ++d)
        for (std::size_t t = 0; t < n_tok; ++t)
          level[d * n_tok + t] = tok(Eigen::Index(t), Eigen::Index(d));
      out.push_back(std::move(level));
    }
    return out;
  }

  std::vector<NamedTensor> named_weights() const override {
    std::vector<NamedTensor> out;
    out.push_back({"patch_embed.weight", patch_w_});
    out.push_back({"patch_embed.bias", patch_b_});
    for (std::size_t i = 0; i < depth_; ++i) {
      const auto p = "blocks." + std::to_string(i) + ".";
      const auto& b = blocks_[i];
      out.push_back({p + "ln1.gamma", b.ln1_g});
      out.push_back({p + "ln1.beta", b.ln1_b});
      out.push_back({p + "qkv.weight", b.qkv_w});
      out.push_back({p + "qkv.bias", b.qkv_b});
      out.push_back({p + "proj.weight", b.proj_w});
      out.push_back({p + "proj.bias", b.proj_b});
      out.push_back({p + "ln2.gamma", b.ln2_g});
      out.push_back({p + "ln2.beta", b.ln2_b});
      out.push_back({p + "fc1.weight", b.fc1_w});
      out.push_back({p + "fc1.bias", b.fc1_b});
      out.push_back({p + "fc2.weight", b.fc2_w});
      out.push_back({p + "fc2.bias", b.fc2_b});
    }
    return out;
  }

  void load_named_weights(const std::vector<NamedTensor>& weights) override {
    auto grab = [&](const std::string& name, Tensor<float>& dst) {
      for (const auto& t : weights)
        if (t.name == name) {
          require(t.tensor.shape() == dst.shape(), ErrorClass::shape_mismatch,
                  "encoder checkpoint tensor " + name + " has wrong shape");
          dst = t.tensor;
          return;
        }
      raise(ErrorClass::io_failure, "encoder checkpoint missing tensor " + name);
    };
    grab("patch_embed.weight", patch_w_);
    grab("patch_embed.bias", patch_b_);
    for (std::size_t i = 0; i < depth_; ++i) {
      const auto p = "blocks." + std::to_string(i) + ".";
      auto& b = blocks_[i];
      grab(p + "ln1.gamma", b.ln1_g);
      grab(p + "ln1.beta", b.ln1_b);
      grab(p + "qkv.weight", b.qkv_w);
      grab(p + "qkv.bias", b.qkv_b);
      grab(p + "proj.weight", b.proj_w);
      grab(p + "proj.bias", b.proj_b);
      grab(p + "ln2.gamma", b.ln2_g);
      grab(p + "ln2.beta", b.ln2_b);
      grab(p + "fc1.weight", b.fc1_w);
      grab(p + "fc1.bias", b.fc1_b);
      grab(p + "fc2.weight", b.fc2_w);
      grab(p + "fc2.bias", b.fc2_b);
    }
  }

 private:
  static constexpr std::size_t kPatch = 16;

  struct Block {
    Tensor<float> ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor<float> qkv_w, qkv_b, proj_w, proj_b;
    Tensor<float> fc1_w, fc1_b, fc2_w, fc2_b;
  };

  static Eigen::MatrixXf layer_norm(const Eigen::MatrixXf& x,
                                    const Tensor<float>& g, const Tensor<float>& b) {
    Eigen::MatrixXf y = x;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const float mu = y.row(r).mean();
      const float var = (y.row(r).array() - mu).square().mean();
      const float inv = 1.f / std::sqrt(var + 1e-6f);
      for (Eigen::Index c = 0; c < y.cols(); ++c)
        y(r, c) = (y(r, c) - mu) * inv * g[std::size_t(c)] + b[std::size_t(c)];
    }
    return y;
  }

  Eigen::MatrixXf run_block(const Block& b, const Eigen::MatrixXf& x) const {
    const Eigen::Index n = x.rows(), d = Eigen::Index(dim_);
    const Eigen::Index hd = d / Eigen::Index(heads_);
    Eigen::MatrixXf h = layer_norm(x, b.ln1_g, b.ln1_b);
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        qkv_w(b.qkv_w.data(), 3 * d, d);
    Eigen::MatrixXf qkv = h * qkv_w.transpose();
    for (Eigen::Index c = 0; c < 3 * d; ++c)
      qkv.col(c).array() += b.qkv_b[std::size_t(c)];
    Eigen::MatrixXf attn_out(n, d);
    const float scale = 1.f / std::sqrt(float(hd));
    for (std::size_t head = 0; head < heads_; ++head) {
      const Eigen::Index off = Eigen::Index(head) * hd;
      auto q = qkv.middleCols(off, hd);
      auto k = qkv.middleCols(d + off, hd);
      auto v = qkv.middleCols(2 * d + off, hd);
      Eigen::MatrixXf scores = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < n; ++r) {
        const float mx = scores.row(r).maxCoeff();
        Eigen::ArrayXf e = (scores.row(r).array() - mx).exp();
        scores.row(r) = e / e.sum();
      }
      attn_out.middleCols(off, hd) = scores * v;
    }
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        proj_w(b.proj_w.data(), d, d);
    Eigen::MatrixXf y = x + (attn_out * proj_w.transpose()).eval();
    for (Eigen::Index c = 0; c < d; ++c) y.col(c).array() += b.proj_b[std::size_t(c)];

    Eigen::MatrixXf h2 = layer_norm(y, b.ln2_g, b.ln2_b);
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        fc1_w(b.fc1_w.data(), 4 * d, d);
    Eigen::MatrixXf mid = h2 * fc1_w.transpose();
    for (Eigen::Index c = 0; c < 4 * d; ++c) mid.col(c).array() += b.fc1_b[std::size_t(c)];
    mid = mid.unaryExpr([](float v) {
      return 0.5f * v * (1.f + std::erf(v / std::numbers::sqrt2_v<float>));
    });
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        fc2_w(b.fc2_w.data(), d, 4 * d);
    Eigen::MatrixXf out = y + (mid * fc2_w.transpose()).eval();
    for (Eigen::Index c = 0; c < d; ++c) out.col(c).array() += b.fc2_b[std::size_t(c)];
    return out;
  }

  std::size_t in_ch_, dim_, depth_, heads_;
  Tensor<float> patch_w_, patch_b_;
  std::vector<Block> blocks_;
};

/// Frozen encoder bound to a spec: validates layer ids, applies input
/// normalization, and exposes the shared-weight extraction contract.
class Encoder {
 public:
  static Encoder create(const EncoderSpec& spec) {
    std::unique_ptr<EncoderAdapter> adapter;
    if (spec.adapter == "desk_cnn") {
      adapter = std::make_unique<DeskCnnAdapter>(spec.in_channels, spec.weight_seed);
    } else if (spec.adapter == "vit") {
      adapter = std::make_unique<ViTAdapter>(spec.in_channels, spec.weight_seed);
    } else {
      raise(ErrorClass::unknown_adapter, "unknown encoder adapter: " + spec.adapter);
    }
    if (spec.weight_source == WeightSource::external_checkpoint)
      adapter->load_named_weights(load_tensors(spec.checkpoint_path));
    Encoder enc;
    enc.spec_ = spec;
    enc.adapter_ = std::move(adapter);
    enc.validate_layer_ids();
    return enc;
  }

  const EncoderSpec& spec() const { return spec_; }

  /// Metadata for the configured layer ids, in order.
  std::vector<LevelMeta> list_levels() const {
    std::vector<LevelMeta> out;
    const auto avail = adapter_->available_levels();
    for (int id : spec_.layer_ids) {
      auto it = std::find_if(avail.begin(), avail.end(),
                             [&](const LevelMeta& m) { return m.layer_id == id; });
      out.push_back(*it);
    }
    return out;
  }

  std::size_t coarsest_stride() const {
    std::size_t s = 1;
    for (const auto& m : adapter_->available_levels()) s = std::max(s, m.stride);
    return s;
  }

  /// Extract the configured feature hierarchy for one normalized image.
  FeatureSet extract(const Tensor<float>& image) const {
    require(image.rank() == 3 && image.dim(0) == adapter_->in_channels(),
            ErrorClass::shape_mismatch,
            "encoder expects " + std::to_string(adapter_->in_channels()) +
                " input channels, got " + std::to_string(image.dim(0)));
    const std::size_t s = coarsest_stride();
    require(image.dim(1) % s == 0 && image.dim(2) % s == 0,
            ErrorClass::shape_mismatch,
            "image size must be divisible by the coarsest stride " +
                std::to_string(s));
    Tensor<float> x = image;
    if (!spec_.norm_mean.empty()) {
      const std::size_t plane = x.dim(1) * x.dim(2);
      for (std::size_t c = 0; c < x.dim(0); ++c) {
        const float mu = spec_.norm_mean[c];
        const float sd = spec_.norm_std.empty() ? 1.f : spec_.norm_std[c];
        float* p = x.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - mu) / sd;
      }
    }

    std::vector<Tensor<float>> all;
    if (auto* desk = dynamic_cast<const DeskCnnAdapter*>(adapter_.get())) {
      all = desk->run_all(x);
    } else if (auto* vit = dynamic_cast<const ViTAdapter*>(adapter_.get())) {
      all = vit->run_all(x);
    }
    FeatureSet fs;
    for (int id : spec_.layer_ids) {
      fs.layer_ids.push_back(id);
      fs.levels.push_back(all[std::size_t(id) - 1]);
    }
    return fs;
  }

  std::uint64_t weight_hash() const {
    std::uint64_t h = fnv1a(adapter_->name());
    for (int id : spec_.layer_ids) h = fnv1a(&id, sizeof(id), h);
    for (const auto& t : adapter_->named_weights()) {
      h = fnv1a(t.name, h);
      h = fnv1a(t.tensor.data(), t.tensor.size() * sizeof(float), h);
    }
    return h;
  }

  void save_weights(const std::filesystem::path& path) const {
    save_tensors(path, adapter_->named_weights());
  }

 private:
  void validate_layer_ids() const {
    require(!spec_.layer_ids.empty(), ErrorClass::invalid_config,
            "encoder layer_ids must be non-empty");
    const auto avail = adapter_->available_levels();
    int prev = 0;
    for (int id : spec_.layer_ids) {
      require(id > prev, ErrorClass::invalid_config,
              "encoder layer_ids must be strictly increasing");
      prev = id;
      const bool known = std::any_of(avail.begin(), avail.end(), [&](const LevelMeta& m) {
        return m.layer_id == id;
      });
      require(known, ErrorClass::unknown_layer,
              "layer id " + std::to_string(id) + " not provided by adapter " +
                  adapter_->name());
    }
  }

  EncoderSpec spec_;
  std::shared_ptr<EncoderAdapter> adapter_;
};

}  // namespace mason
