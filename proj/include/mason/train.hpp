#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mason/changegen.hpp"
#include "mason/data.hpp"
#include "mason/decoder.hpp"
#include "mason/encoder.hpp"
#include "mason/loss.hpp"
#include "mason/optim.hpp"
#include "mason/serialize.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mason {

struct TrainConfig {
  std::size_t iterations = 1000;
  std::size_t batch_size = 16;
  float lr_decoder = 1e-5f;
  float lr_quantiles = 1e-7f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float weight_decay = 0.01f;  // decoder weights only; quantiles are never decayed
  std::string schedule = "cosine";  // cosine | constant
  std::uint64_t seed = 0;
  bool augment = true;
  std::string shuffle = "per_iteration";  // per_iteration | per_epoch
  float dice_smooth = 1.0f;
  float q_clamp_lo = 0.01f;
  float q_clamp_hi = 0.99f;
  std::string checkpoint_path;  // optional
  std::string log_csv_path;     // optional per-step scalar log
  std::string debug_dir;        // optional mask/scale dumps
  bool deterministic = true;

  void validate() const {
    require(iterations > 0, ErrorClass::invalid_config, "iterations must be > 0");
    require(batch_size > 0, ErrorClass::invalid_config, "batch_size must be > 0");
    require(lr_decoder > 0.f, ErrorClass::invalid_config, "lr_decoder must be > 0");
    require(lr_quantiles > 0.f, ErrorClass::invalid_config, "lr_quantiles must be > 0");
    require(schedule == "cosine" || schedule == "constant",
            ErrorClass::invalid_config, "schedule must be cosine or constant");
    require(shuffle == "per_iteration" || shuffle == "per_epoch",
            ErrorClass::invalid_config, "shuffle must be per_iteration or per_epoch");
    require(q_clamp_lo > 0.f && q_clamp_hi < 1.f && q_clamp_lo < q_clamp_hi,
            ErrorClass::invalid_config, "invalid quantile clamp range");
  }
};

/// Final training state. The rng "state" is the (seed, iteration) pair: all
/// streams are counter-based and derive from it.
struct Checkpoint {
  std::vector<NamedTensor> decoder_state;
  float q_irrelevant = 0.f, q_relevant = 0.f;
  std::uint64_t encoder_hash = 0;
  std::size_t iteration = 0;
  std::uint64_t seed = 0;
  json config_snapshot;
  DecoderConfig decoder_config;
  std::vector<std::size_t> level_channels;
};

struct StepLog {
  std::size_t step;
  double loss, lr, q_irrelevant, q_relevant, mean_sigma_irrelevant, mean_sigma_relevant;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  CheckpointFile f;
  f.meta["format_version"] = 1;
  f.meta["q_irrelevant"] = c.q_irrelevant;
  f.meta["q_relevant"] = c.q_relevant;
  f.meta["encoder_hash"] = c.encoder_hash;
  f.meta["iteration"] = c.iteration;
  f.meta["seed"] = c.seed;
  f.meta["config"] = c.config_snapshot;
  f.meta["decoder"] = {{"width", c.decoder_config.width},
                       {"ppm_scales", c.decoder_config.ppm_scales},
                       {"batch_norm", c.decoder_config.batch_norm},
                       {"head_zero_init", c.decoder_config.head_zero_init},
                       {"head_gain", c.decoder_config.head_gain},
                       {"head_bias_init", c.decoder_config.head_bias_init},
                       {"level_channels", c.level_channels}};
  f.tensors = c.decoder_state;
  save_checkpoint_file(path, f);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  CheckpointFile f = load_checkpoint_file(path);
  Checkpoint c;
  c.q_irrelevant = f.meta.at("q_irrelevant").get<float>();
  c.q_relevant = f.meta.at("q_relevant").get<float>();
  c.encoder_hash = f.meta.at("encoder_hash").get<std::uint64_t>();
  c.iteration = f.meta.at("iteration").get<std::size_t>();
  c.seed = f.meta.at("seed").get<std::uint64_t>();
  c.config_snapshot = f.meta.value("config", json::object());
  const auto& d = f.meta.at("decoder");
  c.decoder_config.width = d.at("width").get<std::size_t>();
  c.decoder_config.ppm_scales = d.at("ppm_scales").get<std::vector<std::size_t>>();
  c.decoder_config.batch_norm = d.at("batch_norm").get<bool>();
  c.decoder_config.head_zero_init = d.at("head_zero_init").get<bool>();
  c.decoder_config.head_gain = d.at("head_gain").get<float>();
  c.decoder_config.head_bias_init = d.at("head_bias_init").get<float>();
  c.level_channels = d.at("level_channels").get<std::vector<std::size_t>>();
  c.decoder_state = std::move(f.tensors);
  return c;
}

namespace detail {

inline std::vector<std::size_t> batch_indices(const TrainConfig& tc,
                                              std::size_t dataset_size,
                                              std::size_t step) {
  std::vector<std::size_t> out(tc.batch_size);
  if (tc.shuffle == "per_iteration") {
    RngStream rng = make_stream(tc.seed, "batch", step);
    if (dataset_size >= tc.batch_size) {
      // partial Fisher-Yates over [0, dataset_size)
      std::vector<std::size_t> pool(dataset_size);
      std::iota(pool.begin(), pool.end(), 0);
      for (std::size_t i = 0; i < tc.batch_size; ++i) {
        const std::size_t j = i + rng.below(dataset_size - i);
        std::swap(pool[i], pool[j]);
        out[i] = pool[i];
      }
    } else {
      for (auto& v : out) v = rng.below(dataset_size);
    }
  } else {
    const std::size_t per_epoch = std::max<std::size_t>(1, dataset_size / tc.batch_size);
    const std::size_t epoch = step / per_epoch, slot = step % per_epoch;
    RngStream rng = make_stream(tc.seed, "epoch", epoch);
    std::vector<std::size_t> perm(dataset_size);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = dataset_size; i > 1; --i)
      std::swap(perm[i - 1], perm[rng.below(i)]);
    for (std::size_t i = 0; i < tc.batch_size; ++i)
      out[i] = perm[(slot * tc.batch_size + i) % dataset_size];
  }
  return out;
}

template <typename F>
void parallel_for(std::size_t n, F&& f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(n); ++i) f(std::size_t(i));
}

inline std::string sigma_dump(const std::vector<NoiseScales<float>>& si,
                              const std::vector<NoiseScales<float>>& sr) {
  std::ostringstream os;
  os << "sigma_irrelevant=[";
  for (const auto& s : si) {
    double m = 0;
    for (float v : s.sigma) m += v;
    os << (s.sigma.empty() ? 0.0 : m / double(s.sigma.size())) << " ";
  }
  os << "] sigma_relevant=[";
  for (const auto& s : sr) {
    double m = 0;
    for (float v : s.sigma) m += v;
    os << (s.sigma.empty() ? 0.0 : m / double(s.sigma.size())) << " ";
  }
  os << "]";
  return os.str();
}

}  // namespace detail

/// Unsupervised training: encode, synthesize noise pairs, fuse, decode, Dice
/// loss against the generated masks. Runs exactly `iterations` optimizer
/// steps and returns the final-iteration checkpoint (no validation-based
/// selection). The encoder stays frozen throughout.
inline TrainResult train(const TrainConfig& tc,
                         const std::vector<BiTemporalSample>& data,
                         const Encoder& encoder, const ChangeGenConfig& cg,
                         const DecoderConfig& dc,
                         const json& config_snapshot = json::object()) {
  tc.validate();
  std::string why;
  require(cg.validate(&why), ErrorClass::invalid_config, "changegen config: " + why);
  require(!data.empty(), ErrorClass::invalid_config, "training dataset is empty");

  const std::size_t img_h = data[0].height(), img_w = data[0].width();
  const auto metas = encoder.list_levels();
  std::vector<std::size_t> level_channels;
  for (const auto& m : metas) level_channels.push_back(m.channels);

  RngStream init_rng = make_stream(tc.seed, "decoder_init");
  UperNetDecoder<float> decoder(level_channels, dc, init_rng);

  Tensor<float> q_irrel({1}), q_rel({1});
  Tensor<float> q_irrel_grad({1}), q_rel_grad({1});
  q_irrel[0] = cg.q_init_irrelevant;
  q_rel[0] = cg.q_init_relevant;

  AdamW<float> opt({tc.beta1, tc.beta2, tc.adam_eps});
  opt.add_group(decoder.params(), tc.lr_decoder, tc.weight_decay);
  opt.add_group({{"q_irrelevant", &q_irrel, &q_irrel_grad, false},
                 {"q_relevant", &q_rel, &q_rel_grad, false}},
                tc.lr_quantiles, 0.f);

  const std::uint64_t encoder_hash_before = encoder.weight_hash();
  const std::size_t N = tc.batch_size, L = metas.size();
  TrainResult result;
  result.log.reserve(tc.iterations);

  for (std::size_t step = 0; step < tc.iterations; ++step) {
    const auto idx = detail::batch_indices(tc, data.size(), step);

    // assemble the augmented batch
    std::vector<BiTemporalSample> batch(N);
    detail::parallel_for(N, [&](std::size_t i) {
      if (tc.augment) {
        RngStream rng = make_stream(tc.seed, "augment", step, i);
        batch[i] = augment_pair(data[idx[i]], rng);
      } else {
        batch[i] = data[idx[i]];
      }
    });

    // frozen feature extraction, batched per level
    BatchedFeatures f1, f2;
    f1.layer_ids = f2.layer_ids = encoder.spec().layer_ids;
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t ch = metas[l].channels;
      const std::size_t fh = img_h / metas[l].stride, fw = img_w / metas[l].stride;
      f1.levels.emplace_back(std::vector<std::size_t>{N, ch, fh, fw});
      f2.levels.emplace_back(std::vector<std::size_t>{N, ch, fh, fw});
    }
    detail::parallel_for(N, [&](std::size_t i) {
      FeatureSet a = encoder.extract(batch[i].t1);
      FeatureSet b = encoder.extract(batch[i].t2);
      for (std::size_t l = 0; l < L; ++l) {
        std::copy_n(a.levels[l].data(), a.levels[l].size(),
                    f1.levels[l].data() + i * a.levels[l].size());
        std::copy_n(b.levels[l].data(), b.levels[l].size(),
                    f2.levels[l].data() + i * b.levels[l].size());
      }
    });

    // synthesize the two training pairs and build decoder inputs
    std::vector<Tensor<float>> diff(L);  // (2N, C, H, W), pair 1 then pair 2
    Tensor<float> targets({2 * N, img_h, img_w});
    ChangeGenStep gen;
    PixelSpacePair px_pairs[2];
    if (!cg.pixel_space) {
      try {
        gen = synthesize_pairs(f1, f2, cg, q_irrel[0], q_rel[0], tc.seed, step,
                               img_h, img_w);
      } catch (const Error& e) {
        if (e.error_class() != ErrorClass::numeric_failure) throw;
        raise(ErrorClass::numeric_failure,
              "non-finite feature statistics at step " + std::to_string(step) +
                  " (sigma estimation): " + e.what());
      }
      for (std::size_t l = 0; l < L; ++l) {
        const auto& sh = f1.levels[l].shape();
        diff[l] = Tensor<float>({2 * N, sh[1], sh[2], sh[3]});
        const std::size_t sz = f1.levels[l].size();
        for (int pair = 0; pair < 2; ++pair) {
          const Tensor<float>& orig = pair == 0 ? f1.levels[l] : f2.levels[l];
          const Tensor<float>& pert = gen.pairs[pair].perturbed[l];
          float* d = diff[l].data() + std::size_t(pair) * sz;
          for (std::size_t i = 0; i < sz; ++i) d[i] = orig[i] - pert[i];
        }
      }
      for (int pair = 0; pair < 2; ++pair)
        std::copy_n(gen.pairs[pair].targets.data(), N * img_h * img_w,
                    targets.data() + std::size_t(pair) * N * img_h * img_w);
    } else {
      // ablation arm: perturb pixels, then push both versions through the
      // frozen encoder. Quantile parameters receive no gradient on this path.
      Tensor<float> imgs[2] = {
          Tensor<float>({N, batch[0].channels(), img_h, img_w}),
          Tensor<float>({N, batch[0].channels(), img_h, img_w})};
      for (std::size_t i = 0; i < N; ++i) {
        std::copy_n(batch[i].t1.data(), batch[i].t1.size(),
                    imgs[0].data() + i * batch[i].t1.size());
        std::copy_n(batch[i].t2.data(), batch[i].t2.size(),
                    imgs[1].data() + i * batch[i].t2.size());
      }
      for (int pair = 0; pair < 2; ++pair)
        px_pairs[pair] = pixel_space_perturb(imgs[pair], imgs[1 - pair], cg,
                                             q_irrel[0], q_rel[0], tc.seed, step,
                                             std::uint64_t(pair));
      for (std::size_t l = 0; l < L; ++l) {
        const auto& sh = f1.levels[l].shape();
        diff[l] = Tensor<float>({2 * N, sh[1], sh[2], sh[3]});
      }
      detail::parallel_for(2 * N, [&](std::size_t j) {
        const int pair = j < N ? 0 : 1;
        const std::size_t i = j % N;
        const Tensor<float>& img = pair == 0 ? batch[i].t1 : batch[i].t2;
        Tensor<float> pert({img.dim(0), img_h, img_w});
        std::copy_n(px_pairs[pair].perturbed.data() + i * pert.size(), pert.size(),
                    pert.data());
        FeatureSet fo = encoder.extract(img);
        FeatureSet fp = encoder.extract(pert);
        for (std::size_t l = 0; l < L; ++l) {
          const std::size_t sz = fo.levels[l].size();
          float* d = diff[l].data() + j * sz;
          for (std::size_t k = 0; k < sz; ++k)
            d[k] = fo.levels[l][k] - fp.levels[l][k];
        }
      });
      for (int pair = 0; pair < 2; ++pair)
        std::copy_n(px_pairs[pair].targets.data(), N * img_h * img_w,
                    targets.data() + std::size_t(pair) * N * img_h * img_w);
    }

    // decode and compute the summed Dice loss (batch mean per pair)
    Tensor<float> logits = decoder.forward(diff, img_h, img_w, /*training=*/true);
    Tensor<float> dlogits(logits.shape());
    std::vector<double> losses(2 * N);
    detail::parallel_for(2 * N, [&](std::size_t j) {
      const std::size_t off = j * img_h * img_w;
      losses[j] = double(dice_loss_span<float>(
          logits.data() + off, targets.data() + off, img_h * img_w,
          dlogits.data() + off, 1.f / float(N), tc.dice_smooth));
    });
    double loss = 0;
    for (double v : losses) loss += v / double(N);
    if (!std::isfinite(loss)) {
      const std::string dump =
          cg.pixel_space ? std::string("(pixel-space scales)")
                         : detail::sigma_dump(gen.sigma_irrelevant, gen.sigma_relevant);
      raise(ErrorClass::numeric_failure,
            "non-finite loss at step " + std::to_string(step) + "; " + dump);
    }

    opt.zero_grad();
    std::vector<Tensor<float>> dinput = decoder.backward(dlogits);
    if (!cg.pixel_space) {
      double dq_i = 0, dq_r = 0;
      for (int pair = 0; pair < 2; ++pair) {
        std::vector<Tensor<float>> dpair(L);
        for (std::size_t l = 0; l < L; ++l) {
          const auto& sh = diff[l].shape();
          dpair[l] = Tensor<float>({N, sh[1], sh[2], sh[3]});
          std::copy_n(dinput[l].data() + std::size_t(pair) * dpair[l].size(),
                      dpair[l].size(), dpair[l].data());
        }
        accumulate_quantile_grads(gen.pairs[pair], gen.sigma_irrelevant,
                                  gen.sigma_relevant, dpair, dq_i, dq_r);
      }
      q_irrel_grad[0] = float(dq_i);
      q_rel_grad[0] = float(dq_r);
    }

    const float lr_scale =
        tc.schedule == "cosine" ? cosine_lr(step, tc.iterations, 1.f) : 1.f;
    opt.step(lr_scale);
    if (!std::isfinite(q_irrel[0]) || !std::isfinite(q_rel[0]))
      raise(ErrorClass::numeric_failure,
            "quantile parameters went non-finite at step " + std::to_string(step) +
                "; " + detail::sigma_dump(gen.sigma_irrelevant, gen.sigma_relevant));
    q_irrel[0] = std::clamp(q_irrel[0], tc.q_clamp_lo, tc.q_clamp_hi);
    q_rel[0] = std::clamp(q_rel[0], tc.q_clamp_lo, tc.q_clamp_hi);

    double msi = 0, msr = 0;
    if (!cg.pixel_space) {
      std::size_t ci = 0, cr = 0;
      for (const auto& s : gen.sigma_irrelevant)
        for (float v : s.sigma) { msi += v; ++ci; }
      for (const auto& s : gen.sigma_relevant)
        for (float v : s.sigma) { msr += v; ++cr; }
      if (ci) msi /= double(ci);
      if (cr) msr /= double(cr);
    }
    result.log.push_back({step, loss, double(tc.lr_decoder) * double(lr_scale),
                          double(q_irrel[0]), double(q_rel[0]), msi, msr});
  }

  require(encoder.weight_hash() == encoder_hash_before, ErrorClass::numeric_failure,
          "encoder weights changed during training (frozen contract violated)");

  Checkpoint ckpt;
  for (auto& p : decoder.params())
    ckpt.decoder_state.push_back({p.name, *p.value});
  for (auto& b : decoder.buffers())
    ckpt.decoder_state.push_back({b.first, *b.second});
  ckpt.q_irrelevant = q_irrel[0];
  ckpt.q_relevant = q_rel[0];
  ckpt.encoder_hash = encoder_hash_before;
  ckpt.iteration = tc.iterations;
  ckpt.seed = tc.seed;
  ckpt.config_snapshot = config_snapshot;
  ckpt.decoder_config = dc;
  ckpt.level_channels = level_channels;
  result.checkpoint = std::move(ckpt);

  if (!tc.log_csv_path.empty()) {
    std::ofstream os(tc.log_csv_path);
    os << "step,loss,lr,q_irrelevant,q_relevant,mean_sigma_irrelevant,mean_sigma_relevant\n";
    for (const auto& r : result.log)
      os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.q_irrelevant << ','
         << r.q_relevant << ',' << r.mean_sigma_irrelevant << ','
         << r.mean_sigma_relevant << '\n';
  }
  if (!tc.checkpoint_path.empty())
    save_checkpoint(tc.checkpoint_path, result.checkpoint);
  return result;
}

/// Inference wrapper around a trained checkpoint: encode both images, fuse by
/// subtraction, decode in eval mode.
class ChangeDetector {
 public:
  ChangeDetector(const Encoder& encoder, const Checkpoint& ckpt)
      : encoder_(encoder) {
    require(ckpt.encoder_hash == encoder.weight_hash(), ErrorClass::invalid_config,
            "checkpoint was trained with a different encoder (hash mismatch)");
    RngStream rng = make_stream(0, "unused");
    decoder_ = UperNetDecoder<float>(ckpt.level_channels, ckpt.decoder_config, rng);
    load_state(ckpt);
  }

  PredictionMap predict_logits(const BiTemporalSample& sample) {
    FeatureSet a = encoder_.extract(sample.t1);
    FeatureSet b = encoder_.extract(sample.t2);
    DifferenceSet d = fuse_difference(a, b);
    std::vector<Tensor<float>> levels;
    for (auto& lv : d.levels) {
      Tensor<float> t({1, lv.dim(0), lv.dim(1), lv.dim(2)});
      std::copy_n(lv.data(), lv.size(), t.data());
      levels.push_back(std::move(t));
    }
    Tensor<float> logits = decoder_.forward(levels, sample.height(),
                                            sample.width(), /*training=*/false);
    PredictionMap out;
    out.logits = Tensor<float>({sample.height(), sample.width()});
    std::copy_n(logits.data(), out.logits.size(), out.logits.data());
    return out;
  }

  MaskU8 predict_mask(const BiTemporalSample& sample) {
    return binarize(predict_logits(sample));
  }

 private:
  void load_state(const Checkpoint& ckpt) {
    auto find = [&](const std::string& name) -> const Tensor<float>* {
      for (const auto& t : ckpt.decoder_state)
        if (t.name == name) return &t.tensor;
      return nullptr;
    };
    for (auto& p : decoder_.params()) {
      const Tensor<float>* t = find(p.name);
      require(t != nullptr, ErrorClass::io_failure,
              "checkpoint missing decoder tensor " + p.name);
      require(t->shape() == p.value->shape(), ErrorClass::shape_mismatch,
              "checkpoint tensor " + p.name + " has wrong shape");
      *p.value = *t;
    }
    for (auto& b : decoder_.buffers()) {
      const Tensor<float>* t = find(b.first);
      require(t != nullptr, ErrorClass::io_failure,
              "checkpoint missing decoder buffer " + b.first);
      *b.second = *t;
    }
  }

  Encoder encoder_;
  UperNetDecoder<float> decoder_;
};

}  // namespace mason
