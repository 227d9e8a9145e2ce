#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mason/data.hpp"
#include "mason/decoder.hpp"
#include "mason/encoder.hpp"
#include "mason/image.hpp"
#include "mason/serialize.hpp"
#include "mason/train.hpp"

namespace mason {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

/// Pixel counts with change class = 1. Inputs must be binary.
inline ConfusionCounts confusion_counts(const MaskU8& pred, const MaskU8& gt) {
  require(pred.shape() == gt.shape(), ErrorClass::shape_mismatch,
          "confusion_counts: shape mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require(pred[i] <= 1 && gt[i] <= 1, ErrorClass::invalid_argument,
            "confusion_counts: masks must be binary");
    if (pred[i] && gt[i]) ++c.tp;
    else if (pred[i] && !gt[i]) ++c.fp;
    else if (!pred[i] && gt[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Binary change-class metrics; zero denominators yield 0 so aggregation
/// stays total.
struct BinaryMetrics {
  double precision = 0, recall = 0, f1 = 0;
};

inline BinaryMetrics metrics_from_counts(const ConfusionCounts& c) {
  BinaryMetrics m;
  m.precision = (c.tp + c.fp) ? double(c.tp) / double(c.tp + c.fp) : 0.0;
  m.recall = (c.tp + c.fn) ? double(c.tp) / double(c.tp + c.fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

struct SeedResult {
  std::uint64_t seed = 0;
  ConfusionCounts counts;
  BinaryMetrics metrics;
};

/// Per-seed values plus mean and population standard deviation.
struct MetricsReport {
  std::vector<SeedResult> per_seed;
  BinaryMetrics mean, stddev;
};

inline MetricsReport aggregate_seeds(std::vector<SeedResult> seeds) {
  MetricsReport r;
  r.per_seed = std::move(seeds);
  const double n = double(r.per_seed.size());
  if (r.per_seed.empty()) return r;
  for (const auto& s : r.per_seed) {
    r.mean.precision += s.metrics.precision / n;
    r.mean.recall += s.metrics.recall / n;
    r.mean.f1 += s.metrics.f1 / n;
  }
  for (const auto& s : r.per_seed) {
    r.stddev.precision += (s.metrics.precision - r.mean.precision) *
                          (s.metrics.precision - r.mean.precision) / n;
    r.stddev.recall +=
        (s.metrics.recall - r.mean.recall) * (s.metrics.recall - r.mean.recall) / n;
    r.stddev.f1 += (s.metrics.f1 - r.mean.f1) * (s.metrics.f1 - r.mean.f1) / n;
  }
  r.stddev.precision = std::sqrt(r.stddev.precision);
  r.stddev.recall = std::sqrt(r.stddev.recall);
  r.stddev.f1 = std::sqrt(r.stddev.f1);
  return r;
}

inline json metrics_report_to_json(const MetricsReport& r) {
  json out;
  out["per_seed"] = json::array();
  for (const auto& s : r.per_seed)
    out["per_seed"].push_back({{"seed", s.seed},
                               {"tp", s.counts.tp},
                               {"fp", s.counts.fp},
                               {"fn", s.counts.fn},
                               {"tn", s.counts.tn},
                               {"precision", s.metrics.precision},
                               {"recall", s.metrics.recall},
                               {"f1", s.metrics.f1}});
  out["mean"] = {{"precision", r.mean.precision},
                 {"recall", r.mean.recall},
                 {"f1", r.mean.f1}};
  out["std"] = {{"precision", r.stddev.precision},
                {"recall", r.stddev.recall},
                {"f1", r.stddev.f1}};
  return out;
}

// ---------------------------------------------------------------------------
// Otsu threshold over a 256-bin histogram: maximizes between-class variance,
// ties broken toward the lower bin. Constant input returns the maximum value
// so that the strict `value > threshold` rule selects nothing.
// ---------------------------------------------------------------------------

inline double otsu_threshold(const Tensor<float>& values) {
  require(!values.empty(), ErrorClass::invalid_argument, "otsu of empty input");
  float lo = values[0], hi = values[0];
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(std::isfinite(values[i]), ErrorClass::invalid_argument,
            "otsu requires finite values");
    lo = std::min(lo, values[i]);
    hi = std::max(hi, values[i]);
  }
  if (!(hi > lo)) return double(hi);  // degenerate single-mode input

  constexpr int kBins = 256;
  std::uint64_t hist[kBins] = {};
  const double scale = double(kBins) / (double(hi) - double(lo));
  for (std::size_t i = 0; i < values.size(); ++i) {
    int b = int((double(values[i]) - double(lo)) * scale);
    b = std::clamp(b, 0, kBins - 1);
    ++hist[b];
  }

  const double total = double(values.size());
  double sum_all = 0;
  for (int b = 0; b < kBins; ++b) sum_all += double(b) * double(hist[b]);

  double w0 = 0, sum0 = 0, best = -1.0;
  int best_k = 0;
  for (int k = 0; k + 1 < kBins; ++k) {
    w0 += double(hist[k]);
    sum0 += double(k) * double(hist[k]);
    if (w0 == 0) continue;
    const double w1 = total - w0;
    if (w1 == 0) break;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double var_between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var_between > best) {  // strict: ties keep the lower bin
      best = var_between;
      best_k = k;
    }
  }
  return double(lo) + double(best_k + 1) / scale;
}

// ---------------------------------------------------------------------------
// Classical baselines.
// ---------------------------------------------------------------------------

/// Per-pixel Euclidean magnitude of (t1 - t2) across channels, Otsu-binarized.
inline MaskU8 pixel_difference_baseline(const BiTemporalSample& sample) {
  const std::size_t C = sample.channels(), H = sample.height(), W = sample.width();
  Tensor<float> mag({H, W});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      double s = 0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = double(sample.t1.at(c, h, w)) - double(sample.t2.at(c, h, w));
        s += d * d;
      }
      mag.at(h, w) = float(std::sqrt(s));
    }
  const double thr = otsu_threshold(mag);
  MaskU8 out({H, W});
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = double(mag[i]) > thr ? 1 : 0;
  return out;
}

/// Change vector analysis on frozen encoder features: L2 norm of the feature
/// difference across channels, upsampled to image resolution, Otsu threshold.
/// Uses the deepest configured level by default; `all_levels` averages the
/// per-level norm maps instead.
inline MaskU8 cva_baseline(const Encoder& encoder, const BiTemporalSample& sample,
                           bool all_levels = false) {
  FeatureSet a = encoder.extract(sample.t1);
  FeatureSet b = encoder.extract(sample.t2);
  const std::size_t H = sample.height(), W = sample.width();
  Tensor<float> acc({H, W});
  std::size_t used = 0;
  for (std::size_t l = 0; l < a.levels.size(); ++l) {
    if (!all_levels && l + 1 != a.levels.size()) continue;
    const auto& fa = a.levels[l];
    const auto& fb = b.levels[l];
    const std::size_t C = fa.dim(0), fh = fa.dim(1), fw = fa.dim(2);
    Tensor<float> norm({1, fh, fw});
    for (std::size_t y = 0; y < fh; ++y)
      for (std::size_t x = 0; x < fw; ++x) {
        double s = 0;
        for (std::size_t c = 0; c < C; ++c) {
          const double d = double(fa.at(c, y, x)) - double(fb.at(c, y, x));
          s += d * d;
        }
        norm.at(0, y, x) = float(std::sqrt(s));
      }
    Tensor<float> up = bilinear_resize(norm, H, W);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += up[i];
    ++used;
  }
  if (used > 1)
    for (auto& v : acc.vec()) v /= float(used);
  const double thr = otsu_threshold(acc);
  MaskU8 out({H, W});
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = double(acc[i]) > thr ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation protocol: dataset-global counts (not per-image averages), one
// training per seed for the learned model, mean/std over seeds.
// ---------------------------------------------------------------------------

using PredictFn = std::function<MaskU8(const BiTemporalSample&)>;

inline ConfusionCounts accumulate_counts(const PredictFn& predict,
                                         const std::vector<BiTemporalSample>& dataset) {
  require(!dataset.empty(), ErrorClass::invalid_config, "evaluation dataset is empty");
  ConfusionCounts total;
  for (const auto& s : dataset) {
    require(s.has_gt, ErrorClass::missing_label,
            "evaluation requires labels; sample " + s.sample_id + " has none");
    total += confusion_counts(predict(s), s.gt);
  }
  return total;
}

inline SeedResult seed_result(std::uint64_t seed, const ConfusionCounts& counts) {
  return {seed, counts, metrics_from_counts(counts)};
}

/// Train-and-evaluate across seeds (the learned-model protocol).
inline MetricsReport evaluate_trained(TrainConfig tc,
                                      const std::vector<BiTemporalSample>& train_data,
                                      const std::vector<BiTemporalSample>& test_data,
                                      const Encoder& encoder,
                                      const ChangeGenConfig& cg, const DecoderConfig& dc,
                                      const std::vector<std::uint64_t>& seeds,
                                      std::vector<TrainResult>* runs_out = nullptr) {
  std::vector<SeedResult> results;
  for (std::uint64_t seed : seeds) {
    tc.seed = seed;
    TrainResult run = train(tc, train_data, encoder, cg, dc);
    ChangeDetector det(encoder, run.checkpoint);
    ConfusionCounts counts = accumulate_counts(
        [&](const BiTemporalSample& s) { return det.predict_mask(s); }, test_data);
    results.push_back(seed_result(seed, counts));
    if (runs_out) runs_out->push_back(std::move(run));
  }
  return aggregate_seeds(std::move(results));
}

/// Deterministic single-pass evaluation (baselines, loaded checkpoints).
inline MetricsReport evaluate_predictor(const PredictFn& predict,
                                        const std::vector<BiTemporalSample>& dataset,
                                        std::uint64_t seed = 0) {
  return aggregate_seeds({seed_result(seed, accumulate_counts(predict, dataset))});
}

/// Prediction overlay: true positives white, false positives red, false
/// negatives blue, over a dimmed t2.
inline Tensor<std::uint8_t> prediction_overlay(const BiTemporalSample& sample,
                                               const MaskU8& pred) {
  const std::size_t H = sample.height(), W = sample.width();
  Tensor<std::uint8_t> out({3, H, W});
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      float base = 0;
      for (std::size_t c = 0; c < sample.channels(); ++c)
        base += sample.t2.at(c % sample.channels(), h, w);
      base /= float(sample.channels());
      const auto g = std::uint8_t(base * 127.f);
      std::uint8_t r = g, gg = g, b = g;
      const bool p = pred.at(h, w), t = sample.has_gt && sample.gt.at(h, w);
      if (p && t) { r = gg = b = 255; }
      else if (p && !t) { r = 255; gg = b = 40; }
      else if (!p && t) { b = 255; r = gg = 40; }
      out.at(0, h, w) = r;
      out.at(1, h, w) = gg;
      out.at(2, h, w) = b;
    }
  return out;
}

}  // namespace mason
