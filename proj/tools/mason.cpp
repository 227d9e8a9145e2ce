// Command-line entry point: config-driven, seeded, reproducible runs.
//
//   mason train   --config cfg.json [--seed N] [--out DIR] [--deterministic]
//   mason eval    --config cfg.json [--checkpoint F | --baseline NAME]
//   mason analyze --config cfg.json [--extra-data ROOT ...]
//   mason synth   --config cfg.json
//
// Errors print one machine-parseable line: `<error_class>: <message>`.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mason/mason.hpp"

namespace fs = std::filesystem;
using namespace mason;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_override;
  std::int64_t seed_override = -1;
  bool deterministic = false;
};

RunConfig load_and_override(const CommonArgs& args) {
  RunConfig rc = load_run_config(args.config_path);
  if (args.seed_override >= 0) {
    rc.seed = std::uint64_t(args.seed_override);
    rc.train.seed = rc.seed;
  }
  if (!args.out_override.empty()) rc.output_dir = args.out_override;
  if (args.deterministic) {
    rc.deterministic = true;
    rc.train.deterministic = true;
  }
  return rc;
}

/// Echo the input config verbatim into the output directory for provenance.
void echo_config(const CommonArgs& args, const RunConfig& rc) {
  fs::create_directories(rc.output_dir);
  std::ifstream src(args.config_path, std::ios::binary);
  std::ofstream dst(fs::path(rc.output_dir) / "run_config.json", std::ios::binary);
  dst << src.rdbuf();
  std::ofstream eff(fs::path(rc.output_dir) / "effective_config.json");
  eff << run_config_to_json(rc).dump(2) << "\n";
}

void write_metrics(const fs::path& out_dir, const std::string& name,
                   const std::string& dataset_tag, const MetricsReport& report) {
  std::ofstream js(out_dir / (name + "_metrics.json"));
  js << metrics_report_to_json(report).dump(2) << "\n";
  std::ofstream csv(out_dir / (name + "_metrics.csv"));
  csv << "dataset,seed,tp,fp,fn,tn,precision,recall,f1\n";
  for (const auto& s : report.per_seed)
    csv << dataset_tag << ',' << s.seed << ',' << s.counts.tp << ',' << s.counts.fp
        << ',' << s.counts.fn << ',' << s.counts.tn << ',' << s.metrics.precision
        << ',' << s.metrics.recall << ',' << s.metrics.f1 << '\n';
}

int cmd_train(const CommonArgs& args) {
  RunConfig rc = load_and_override(args);
  // Validate and materialize data before touching the output directory, so a
  // bad config leaves no artifacts behind.
  auto data = load_config_dataset(rc, /*eval_split=*/false);
  Encoder encoder = Encoder::create(rc.encoder);
  echo_config(args, rc);

  TrainConfig tc = rc.train;
  tc.checkpoint_path = (fs::path(rc.output_dir) / "checkpoint.msn").string();
  tc.log_csv_path = (fs::path(rc.output_dir) / "train_log.csv").string();
  TrainResult res = train(tc, data, encoder, rc.changegen, rc.decoder,
                          run_config_to_json(rc));
  std::cout << "checkpoint: " << tc.checkpoint_path << "\n"
            << "final_loss: " << res.log.back().loss << "\n"
            << "q_irrelevant: " << res.checkpoint.q_irrelevant << "\n"
            << "q_relevant: " << res.checkpoint.q_relevant << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path,
             const std::string& baseline) {
  RunConfig rc = load_and_override(args);
  auto test_data = load_config_dataset(rc, /*eval_split=*/true);
  Encoder encoder = Encoder::create(rc.encoder);
  echo_config(args, rc);
  const fs::path out_dir(rc.output_dir);
  const std::string tag =
      rc.dataset.kind == "synthetic" ? "synthetic" : rc.dataset.root;

  MetricsReport report;
  std::string name;
  if (!baseline.empty()) {
    require(baseline == "pixel_diff" || baseline == "cva",
            ErrorClass::invalid_argument,
            "unknown baseline '" + baseline + "' (expected pixel_diff or cva)");
    name = baseline;
    PredictFn fn;
    if (baseline == "pixel_diff") {
      fn = [](const BiTemporalSample& s) { return pixel_difference_baseline(s); };
    } else {
      fn = [&](const BiTemporalSample& s) {
        return cva_baseline(encoder, s, rc.eval.cva_all_levels);
      };
    }
    report = evaluate_predictor(fn, test_data);
  } else if (!checkpoint_path.empty()) {
    name = "checkpoint";
    Checkpoint ckpt = load_checkpoint(checkpoint_path);
    ChangeDetector det(encoder, ckpt);
    report = evaluate_predictor(
        [&](const BiTemporalSample& s) { return det.predict_mask(s); }, test_data,
        ckpt.seed);
    if (rc.eval.dump_predictions) {
      fs::create_directories(out_dir / "predictions");
      for (const auto& s : test_data)
        write_png(out_dir / "predictions" / (s.sample_id + ".png"),
                  prediction_overlay(s, det.predict_mask(s)));
    }
  } else {
    // full protocol: one training per seed on the train split
    name = "mason";
    auto train_data = load_config_dataset(rc, /*eval_split=*/false);
    report = evaluate_trained(rc.train, train_data, test_data, encoder,
                              rc.changegen, rc.decoder, rc.eval.seeds);
  }
  write_metrics(out_dir, name, tag, report);
  std::cout << name << " mean_f1: " << report.mean.f1 << " (std "
            << report.stddev.f1 << ") over " << report.per_seed.size()
            << " seed(s)\n";
  return 0;
}

int cmd_analyze(const CommonArgs& args, const std::vector<std::string>& extra_roots) {
  RunConfig rc = load_and_override(args);
  Encoder encoder = Encoder::create(rc.encoder);
  auto primary = load_config_dataset(rc, /*eval_split=*/true);
  echo_config(args, rc);
  const fs::path out_dir(rc.output_dir);

  auto emit = [&](const fs::path& dir, const std::vector<LayerHistogram>& layers) {
    fs::create_directories(dir);
    for (const auto& h : layers) {
      const std::string stem = "layer_" + std::to_string(h.layer_id);
      write_histogram_csv(dir / (stem + "_hist.csv"), h);
      write_histogram_plot(dir / (stem + "_hist.png"), h);
    }
    write_moments_csv(dir / "moments.csv", layers);
  };

  std::vector<std::vector<LayerHistogram>> runs;
  runs.push_back(feature_difference_histograms(encoder, primary));
  emit(out_dir / "dataset_0", runs[0]);
  for (std::size_t i = 0; i < extra_roots.size(); ++i) {
    DatasetManifest m;
    m.root = extra_roots[i];
    m.split = rc.dataset.eval_split;
    m.patch_size = rc.dataset.patch_size;
    m.channel_count = rc.dataset.channel_count;
    runs.push_back(feature_difference_histograms(encoder, load_pair_dataset(m)));
    emit(out_dir / ("dataset_" + std::to_string(i + 1)), runs.back());
  }
  // equal-weight average across datasets
  emit(out_dir / "average", average_histograms(runs));
  std::cout << "analysis written to " << out_dir.string() << "\n";
  return 0;
}

int cmd_synth(const CommonArgs& args) {
  RunConfig rc = load_and_override(args);
  require(rc.dataset.kind == "synthetic", ErrorClass::invalid_config,
          "synth requires dataset.kind == synthetic");
  auto train_split = load_config_dataset(rc, /*eval_split=*/false);
  auto test_split = load_config_dataset(rc, /*eval_split=*/true);
  echo_config(args, rc);
  const fs::path root(rc.output_dir);
  write_dataset_split(root, "train", train_split);
  write_dataset_split(root, "test", test_split);
  json manifest;
  manifest["layout_version"] = 1;
  manifest["seed"] = rc.dataset.synth.seed;
  manifest["config"] = run_config_to_json(rc)["dataset"];
  manifest["splits"] = {{"train", train_split.size()}, {"test", test_split.size()}};
  std::ofstream os(root / "manifest.json");
  os << manifest.dump(2) << "\n";
  std::cout << "wrote " << train_split.size() << " train / " << test_split.size()
            << " test samples to " << root.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MaSoN: unsupervised change detection via latent-space noise"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string checkpoint_path, baseline;
  std::vector<std::string> extra_roots;

  auto add_common = [&](CLI::App* cmd, bool config_required = true) {
    auto* opt = cmd->add_option("--config", args.config_path, "run config (JSON)");
    if (config_required) opt->required();
    cmd->add_option("--seed", args.seed_override, "override config seed");
    cmd->add_option("--out", args.out_override, "override output directory");
    cmd->add_flag("--deterministic", args.deterministic,
                  "force deterministic execution");
  };

  auto* train_cmd = app.add_subcommand("train", "train on unlabeled pairs");
  add_common(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "evaluate on a labeled test set");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint file");
  eval_cmd->add_option("--baseline", baseline,
                       "evaluate a baseline instead: pixel_diff | cva");
  auto* analyze_cmd =
      app.add_subcommand("analyze", "feature-difference statistics study");
  add_common(analyze_cmd);
  analyze_cmd->add_option("--extra-data", extra_roots,
                          "additional dataset roots for the cross-dataset average");
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dataset");
  add_common(synth_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return cmd_train(args);
    if (eval_cmd->parsed()) return cmd_eval(args, checkpoint_path, baseline);
    if (analyze_cmd->parsed()) return cmd_analyze(args, extra_roots);
    if (synth_cmd->parsed()) return cmd_synth(args);
  } catch (const Error& e) {
    std::cerr << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal_error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
