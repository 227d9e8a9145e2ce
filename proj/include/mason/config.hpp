#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mason/changegen.hpp"
#include "mason/data.hpp"
#include "mason/decoder.hpp"
#include "mason/encoder.hpp"
#include "mason/train.hpp"

namespace mason {

namespace config_detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& context) {
  require(j.is_object(), ErrorClass::invalid_config, context + " must be an object");
  for (const auto& [key, _] : j.items())
    require(allowed.count(key) > 0, ErrorClass::invalid_config,
            "unknown key '" + key + "' in " + context);
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

inline SamplingDim parse_sampling_dim(const std::string& s) {
  if (s == "per_channel_in_batch") return SamplingDim::per_channel_in_batch;
  if (s == "per_channel_in_sample") return SamplingDim::per_channel_in_sample;
  if (s == "per_sample") return SamplingDim::per_sample;
  if (s == "per_batch") return SamplingDim::per_batch;
  raise(ErrorClass::invalid_config, "unknown sampling_dim: " + s);
}

inline std::string sampling_dim_name(SamplingDim d) {
  switch (d) {
    case SamplingDim::per_channel_in_batch: return "per_channel_in_batch";
    case SamplingDim::per_channel_in_sample: return "per_channel_in_sample";
    case SamplingDim::per_sample: return "per_sample";
    case SamplingDim::per_batch: return "per_batch";
  }
  return "per_channel_in_batch";
}

inline MaskStrategy parse_mask_strategy(const std::string& s) {
  if (s == "perlin") return MaskStrategy::perlin;
  if (s == "rectangles") return MaskStrategy::rectangles;
  if (s == "none") return MaskStrategy::none;
  raise(ErrorClass::invalid_config, "unknown mask_strategy: " + s);
}

inline std::string mask_strategy_name(MaskStrategy m) {
  switch (m) {
    case MaskStrategy::perlin: return "perlin";
    case MaskStrategy::rectangles: return "rectangles";
    case MaskStrategy::none: return "none";
  }
  return "perlin";
}

inline NoiseDist parse_noise_dist(const std::string& s) {
  if (s == "gaussian") return NoiseDist::gaussian;
  if (s == "laplace") return NoiseDist::laplace;
  raise(ErrorClass::invalid_config, "unknown noise distribution: " + s);
}

inline std::string noise_dist_name(NoiseDist d) {
  return d == NoiseDist::gaussian ? "gaussian" : "laplace";
}

}  // namespace config_detail

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | directory
  // directory layout
  std::string root;
  std::string split = "train";
  std::string eval_split = "test";
  std::size_t patch_size = 0;
  std::size_t channel_count = 3;
  // synthetic oracle
  SyntheticSceneConfig synth;
  std::size_t train_samples = 400;
  std::size_t test_samples = 100;
};

struct EvalConfig {
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  bool cva_all_levels = false;
  bool dump_predictions = false;
};

/// Command-scoped union of every runtime knob, parsed strictly: unknown keys
/// are rejected before any computation starts.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/out";
  bool deterministic = true;
  DatasetConfig dataset;
  EncoderSpec encoder;
  ChangeGenConfig changegen;
  DecoderConfig decoder;
  TrainConfig train;
  EvalConfig eval;
  json raw;  // verbatim parsed document, echoed into the output directory
};

inline RunConfig parse_run_config(const json& j) {
  using namespace config_detail;
  check_keys(j, {"seed", "output_dir", "deterministic", "dataset", "encoder",
                 "changegen", "decoder", "train", "eval"},
             "run config");
  RunConfig rc;
  rc.raw = j;
  rc.seed = get_or<std::uint64_t>(j, "seed", 0);
  rc.output_dir = get_or<std::string>(j, "output_dir", "runs/out");
  rc.deterministic = get_or<bool>(j, "deterministic", true);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d,
               {"kind", "root", "split", "eval_split", "patch_size",
                "channel_count", "image_size", "num_shapes", "jitter_brightness",
                "jitter_noise", "change_rate", "seed", "train_samples",
                "test_samples"},
               "dataset");
    rc.dataset.kind = get_or<std::string>(d, "kind", "synthetic");
    require(rc.dataset.kind == "synthetic" || rc.dataset.kind == "directory",
            ErrorClass::invalid_config, "dataset.kind must be synthetic or directory");
    rc.dataset.root = get_or<std::string>(d, "root", "");
    rc.dataset.split = get_or<std::string>(d, "split", "train");
    rc.dataset.eval_split = get_or<std::string>(d, "eval_split", "test");
    rc.dataset.patch_size = get_or<std::size_t>(d, "patch_size", 0);
    rc.dataset.channel_count = get_or<std::size_t>(d, "channel_count", 3);
    rc.dataset.synth.image_size = get_or<std::size_t>(d, "image_size", 128);
    rc.dataset.synth.num_shapes = get_or<std::size_t>(d, "num_shapes", 6);
    rc.dataset.synth.irrelevant_jitter.brightness =
        get_or<float>(d, "jitter_brightness", 0.08f);
    rc.dataset.synth.irrelevant_jitter.noise = get_or<float>(d, "jitter_noise", 0.03f);
    rc.dataset.synth.change_rate = get_or<float>(d, "change_rate", 0.5f);
    rc.dataset.synth.seed = get_or<std::uint64_t>(d, "seed", 1234);
    rc.dataset.synth.channels = rc.dataset.channel_count;
    rc.dataset.train_samples = get_or<std::size_t>(d, "train_samples", 400);
    rc.dataset.test_samples = get_or<std::size_t>(d, "test_samples", 100);
  }

  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    check_keys(e,
               {"adapter", "layer_ids", "in_channels", "weight_source",
                "weight_seed", "checkpoint", "norm_mean", "norm_std"},
               "encoder");
    rc.encoder.adapter = get_or<std::string>(e, "adapter", "desk_cnn");
    rc.encoder.layer_ids = get_or<std::vector<int>>(e, "layer_ids", {1, 2, 3, 4});
    rc.encoder.in_channels = get_or<std::size_t>(e, "in_channels", 3);
    const std::string src = get_or<std::string>(e, "weight_source", "fixed_random");
    if (src == "fixed_random") {
      rc.encoder.weight_source = WeightSource::fixed_random;
    } else if (src == "external_checkpoint") {
      rc.encoder.weight_source = WeightSource::external_checkpoint;
    } else {
      raise(ErrorClass::invalid_config, "unknown encoder weight_source: " + src);
    }
    rc.encoder.weight_seed = get_or<std::uint64_t>(e, "weight_seed", 7);
    rc.encoder.checkpoint_path = get_or<std::string>(e, "checkpoint", "");
    rc.encoder.norm_mean = get_or<std::vector<float>>(e, "norm_mean", {});
    rc.encoder.norm_std = get_or<std::vector<float>>(e, "norm_std", {});
    require(rc.encoder.weight_source != WeightSource::external_checkpoint ||
                !rc.encoder.checkpoint_path.empty(),
            ErrorClass::invalid_config,
            "encoder.checkpoint required for external_checkpoint weights");
  }

  if (j.contains("changegen")) {
    const json& c = j.at("changegen");
    check_keys(c,
               {"q_init_irrelevant", "q_init_relevant", "sampling_dim",
                "mask_strategy", "noise_dist_irrelevant", "noise_dist_relevant",
                "irrelevant_gate_p", "relevant_gate_p", "dynamic",
                "fixed_sigma_irrelevant", "fixed_sigma_relevant", "noise_layers",
                "perlin_threshold", "perlin_cell_divisor", "abs_relevant",
                "pixel_space"},
               "changegen");
    auto& g = rc.changegen;
    g.q_init_irrelevant = get_or<float>(c, "q_init_irrelevant", 0.85f);
    g.q_init_relevant = get_or<float>(c, "q_init_relevant", 0.98f);
    g.sampling_dim = parse_sampling_dim(
        get_or<std::string>(c, "sampling_dim", "per_channel_in_batch"));
    g.mask_strategy =
        parse_mask_strategy(get_or<std::string>(c, "mask_strategy", "perlin"));
    g.noise_dist_irrelevant =
        parse_noise_dist(get_or<std::string>(c, "noise_dist_irrelevant", "gaussian"));
    g.noise_dist_relevant =
        parse_noise_dist(get_or<std::string>(c, "noise_dist_relevant", "gaussian"));
    g.irrelevant_gate_p = get_or<float>(c, "irrelevant_gate_p", 0.5f);
    g.relevant_gate_p = get_or<float>(c, "relevant_gate_p", 0.5f);
    g.dynamic = get_or<bool>(c, "dynamic", true);
    g.fixed_sigma_irrelevant = get_or<float>(c, "fixed_sigma_irrelevant", 0.015f);
    g.fixed_sigma_relevant = get_or<float>(c, "fixed_sigma_relevant", 0.1f);
    g.noise_layers = get_or<std::vector<int>>(c, "noise_layers", {});
    g.perlin_threshold = get_or<float>(c, "perlin_threshold", 0.5f);
    g.perlin_cell_divisor = get_or<std::size_t>(c, "perlin_cell_divisor", 8);
    g.abs_relevant = get_or<bool>(c, "abs_relevant", false);
    g.pixel_space = get_or<bool>(c, "pixel_space", false);
    std::string why;
    require(g.validate(&why), ErrorClass::invalid_config, "changegen: " + why);
  }

  if (j.contains("decoder")) {
    const json& d = j.at("decoder");
    check_keys(d, {"width", "ppm_scales", "batch_norm", "head_zero_init",
                   "head_gain", "head_bias_init"},
               "decoder");
    rc.decoder.width = get_or<std::size_t>(d, "width", 16);
    rc.decoder.head_gain = get_or<float>(d, "head_gain", 1.f);
    rc.decoder.head_bias_init = get_or<float>(d, "head_bias_init", -0.05f);
    rc.decoder.ppm_scales =
        get_or<std::vector<std::size_t>>(d, "ppm_scales", {1, 2, 3, 6});
    rc.decoder.batch_norm = get_or<bool>(d, "batch_norm", true);
    rc.decoder.head_zero_init = get_or<bool>(d, "head_zero_init", true);
    require(rc.decoder.width > 0, ErrorClass::invalid_config,
            "decoder.width must be > 0");
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"iterations", "batch_size", "lr_decoder", "lr_quantiles", "beta1",
                "beta2", "adam_eps", "weight_decay", "schedule", "augment",
                "shuffle", "dice_smooth", "q_clamp_lo", "q_clamp_hi"},
               "train");
    auto& tc = rc.train;
    tc.iterations = get_or<std::size_t>(t, "iterations", 1000);
    tc.batch_size = get_or<std::size_t>(t, "batch_size", 16);
    tc.lr_decoder = get_or<float>(t, "lr_decoder", 1e-5f);
    tc.lr_quantiles = get_or<float>(t, "lr_quantiles", 1e-7f);
    tc.beta1 = get_or<float>(t, "beta1", 0.9f);
    tc.beta2 = get_or<float>(t, "beta2", 0.999f);
    tc.adam_eps = get_or<float>(t, "adam_eps", 1e-8f);
    tc.weight_decay = get_or<float>(t, "weight_decay", 0.01f);
    tc.schedule = get_or<std::string>(t, "schedule", "cosine");
    tc.augment = get_or<bool>(t, "augment", true);
    tc.shuffle = get_or<std::string>(t, "shuffle", "per_iteration");
    tc.dice_smooth = get_or<float>(t, "dice_smooth", 1.0f);
    tc.q_clamp_lo = get_or<float>(t, "q_clamp_lo", 0.01f);
    tc.q_clamp_hi = get_or<float>(t, "q_clamp_hi", 0.99f);
    tc.validate();
  }
  rc.train.seed = rc.seed;
  rc.train.deterministic = rc.deterministic;

  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"seeds", "cva_all_levels", "dump_predictions"}, "eval");
    rc.eval.seeds =
        get_or<std::vector<std::uint64_t>>(e, "seeds", {0, 1, 2, 3, 4});
    rc.eval.cva_all_levels = get_or<bool>(e, "cva_all_levels", false);
    rc.eval.dump_predictions = get_or<bool>(e, "dump_predictions", false);
    require(!rc.eval.seeds.empty(), ErrorClass::invalid_config,
            "eval.seeds must be non-empty");
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(bool(is), ErrorClass::file_not_found, "cannot open config " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    raise(ErrorClass::invalid_config, "config parse error: " + std::string(e.what()));
  }
  return parse_run_config(j);
}

/// Canonical serialization (used for checkpoint snapshots and provenance).
inline json run_config_to_json(const RunConfig& rc) {
  using namespace config_detail;
  json j;
  j["seed"] = rc.seed;
  j["output_dir"] = rc.output_dir;
  j["deterministic"] = rc.deterministic;
  j["dataset"] = {{"kind", rc.dataset.kind},
                  {"root", rc.dataset.root},
                  {"split", rc.dataset.split},
                  {"eval_split", rc.dataset.eval_split},
                  {"patch_size", rc.dataset.patch_size},
                  {"channel_count", rc.dataset.channel_count},
                  {"image_size", rc.dataset.synth.image_size},
                  {"num_shapes", rc.dataset.synth.num_shapes},
                  {"jitter_brightness", rc.dataset.synth.irrelevant_jitter.brightness},
                  {"jitter_noise", rc.dataset.synth.irrelevant_jitter.noise},
                  {"change_rate", rc.dataset.synth.change_rate},
                  {"seed", rc.dataset.synth.seed},
                  {"train_samples", rc.dataset.train_samples},
                  {"test_samples", rc.dataset.test_samples}};
  j["encoder"] = {{"adapter", rc.encoder.adapter},
                  {"layer_ids", rc.encoder.layer_ids},
                  {"in_channels", rc.encoder.in_channels},
                  {"weight_source",
                   rc.encoder.weight_source == WeightSource::fixed_random
                       ? "fixed_random"
                       : "external_checkpoint"},
                  {"weight_seed", rc.encoder.weight_seed},
                  {"checkpoint", rc.encoder.checkpoint_path},
                  {"norm_mean", rc.encoder.norm_mean},
                  {"norm_std", rc.encoder.norm_std}};
  j["changegen"] = {
      {"q_init_irrelevant", rc.changegen.q_init_irrelevant},
      {"q_init_relevant", rc.changegen.q_init_relevant},
      {"sampling_dim", sampling_dim_name(rc.changegen.sampling_dim)},
      {"mask_strategy", mask_strategy_name(rc.changegen.mask_strategy)},
      {"noise_dist_irrelevant", noise_dist_name(rc.changegen.noise_dist_irrelevant)},
      {"noise_dist_relevant", noise_dist_name(rc.changegen.noise_dist_relevant)},
      {"irrelevant_gate_p", rc.changegen.irrelevant_gate_p},
      {"relevant_gate_p", rc.changegen.relevant_gate_p},
      {"dynamic", rc.changegen.dynamic},
      {"fixed_sigma_irrelevant", rc.changegen.fixed_sigma_irrelevant},
      {"fixed_sigma_relevant", rc.changegen.fixed_sigma_relevant},
      {"noise_layers", rc.changegen.noise_layers},
      {"perlin_threshold", rc.changegen.perlin_threshold},
      {"perlin_cell_divisor", rc.changegen.perlin_cell_divisor},
      {"abs_relevant", rc.changegen.abs_relevant},
      {"pixel_space", rc.changegen.pixel_space}};
  j["decoder"] = {{"width", rc.decoder.width},
                  {"ppm_scales", rc.decoder.ppm_scales},
                  {"batch_norm", rc.decoder.batch_norm},
                  {"head_zero_init", rc.decoder.head_zero_init},
                  {"head_gain", rc.decoder.head_gain},
                  {"head_bias_init", rc.decoder.head_bias_init}};
  j["train"] = {{"iterations", rc.train.iterations},
                {"batch_size", rc.train.batch_size},
                {"lr_decoder", rc.train.lr_decoder},
                {"lr_quantiles", rc.train.lr_quantiles},
                {"beta1", rc.train.beta1},
                {"beta2", rc.train.beta2},
                {"adam_eps", rc.train.adam_eps},
                {"weight_decay", rc.train.weight_decay},
                {"schedule", rc.train.schedule},
                {"augment", rc.train.augment},
                {"shuffle", rc.train.shuffle},
                {"dice_smooth", rc.train.dice_smooth},
                {"q_clamp_lo", rc.train.q_clamp_lo},
                {"q_clamp_hi", rc.train.q_clamp_hi}};
  j["eval"] = {{"seeds", rc.eval.seeds},
               {"cva_all_levels", rc.eval.cva_all_levels},
               {"dump_predictions", rc.eval.dump_predictions}};
  return j;
}

/// Dataset materialization shared by the CLI commands.
inline std::vector<BiTemporalSample> load_config_dataset(const RunConfig& rc,
                                                         bool eval_split) {
  if (rc.dataset.kind == "synthetic") {
    SyntheticSceneConfig sc = rc.dataset.synth;
    sc.num_samples = eval_split ? rc.dataset.test_samples : rc.dataset.train_samples;
    sc.id_prefix = eval_split ? "test" : "train";
    return generate_synthetic_dataset(sc);
  }
  DatasetManifest m;
  m.root = rc.dataset.root;
  m.split = eval_split ? rc.dataset.eval_split : rc.dataset.split;
  m.patch_size = rc.dataset.patch_size;
  m.channel_count = rc.dataset.channel_count;
  return load_pair_dataset(m);
}

}  // namespace mason
