#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mason/data.hpp"
#include "mason/encoder.hpp"
#include "mason/image.hpp"
#include "mason/plot.hpp"

namespace mason {

struct GroupMoments {
  std::uint64_t count = 0;
  double mean = 0, variance = 0, excess_kurtosis = 0;
  bool zero_mean_violation = false;  // |mean| > 0.1 * std
};

/// Sample moments of a value sequence; excess kurtosis is m4/m2^2 - 3
/// (defined as 0 for degenerate variance).
inline GroupMoments compute_moments(std::span<const double> values) {
  GroupMoments m;
  m.count = values.size();
  if (values.empty()) return m;
  double s = 0;
  for (double v : values) s += v;
  m.mean = s / double(values.size());
  double m2 = 0, m4 = 0;
  for (double v : values) {
    const double d = v - m.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= double(values.size());
  m4 /= double(values.size());
  m.variance = m2;
  m.excess_kurtosis = m2 > 0 ? m4 / (m2 * m2) - 3.0 : 0.0;
  m.zero_mean_violation = std::abs(m.mean) > 0.1 * std::sqrt(m.variance);
  return m;
}

/// Per-layer feature-difference statistics split into changed/unchanged
/// groups by the (downscaled) ground-truth mask.
struct LayerHistogram {
  int layer_id = 0;
  double bin_lo = 0, bin_hi = 0;  // on per-channel-normalized values
  std::vector<double> changed_density;    // unit area, averaged over channels
  std::vector<double> unchanged_density;  // unit area, averaged over channels
  std::uint64_t changed_count = 0, unchanged_count = 0;  // raw elements
  bool changed_empty = false;  // zero-count marker
  bool unchanged_empty = false;
  GroupMoments changed_moments, unchanged_moments;  // on raw values
};

namespace analysis_detail {

struct Accum {
  std::uint64_t n = 0;
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0;

  void add(double v) {
    ++n;
    s1 += v;
    s2 += v * v;
    s3 += v * v * v;
    s4 += v * v * v * v;
  }

  void merge(const Accum& o) {
    n += o.n;
    s1 += o.s1;
    s2 += o.s2;
    s3 += o.s3;
    s4 += o.s4;
  }

  double mean() const { return n ? s1 / double(n) : 0; }

  double variance() const {
    if (!n) return 0;
    const double mu = mean();
    return std::max(0.0, s2 / double(n) - mu * mu);
  }

  GroupMoments moments() const {
    GroupMoments m;
    m.count = n;
    if (!n) return m;
    const double mu = mean();
    const double m2 = variance();
    // central fourth moment from raw power sums
    const double m4 = s4 / double(n) - 4 * mu * s3 / double(n) +
                      6 * mu * mu * s2 / double(n) - 3 * mu * mu * mu * mu;
    m.mean = mu;
    m.variance = m2;
    m.excess_kurtosis = m2 > 0 ? m4 / (m2 * m2) - 3.0 : 0.0;
    m.zero_mean_violation = std::abs(mu) > 0.1 * std::sqrt(m2);
    return m;
  }
};

}  // namespace analysis_detail

/// Reproduces the feature-statistics study: per-layer histograms of f1 - f2
/// for changed vs unchanged regions. The ground-truth mask is brought to each
/// feature resolution by the same box-average + 0.5 rule used for noise
/// gating. Channels are normalized by their own pooled std before histogram
/// averaging so high-variance channels do not dominate; the bin range spans
/// 6x the pooled (normalized) std, symmetric around zero, and out-of-range
/// values land in the edge bins so no element is dropped.
inline std::vector<LayerHistogram> feature_difference_histograms(
    const Encoder& encoder, const std::vector<BiTemporalSample>& dataset,
    std::size_t bins = 101) {
  require(!dataset.empty(), ErrorClass::invalid_config, "analysis dataset is empty");
  for (const auto& s : dataset)
    require(s.has_gt, ErrorClass::missing_label,
            "analysis requires labels; sample " + s.sample_id + " has none");
  require(bins >= 3, ErrorClass::invalid_argument, "need at least 3 bins");

  using analysis_detail::Accum;
  const auto metas = encoder.list_levels();
  const std::size_t L = metas.size();

  // pass 1: per-channel and pooled moments per group
  std::vector<std::vector<Accum>> acc_changed(L), acc_unchanged(L);
  for (std::size_t l = 0; l < L; ++l) {
    acc_changed[l].resize(metas[l].channels);
    acc_unchanged[l].resize(metas[l].channels);
  }
  std::vector<std::vector<MaskU8>> masks(dataset.size());
  for (std::size_t si = 0; si < dataset.size(); ++si) {
    const auto& s = dataset[si];
    FeatureSet a = encoder.extract(s.t1);
    FeatureSet b = encoder.extract(s.t2);
    for (std::size_t l = 0; l < L; ++l) {
      const auto& fa = a.levels[l];
      const auto& fb = b.levels[l];
      const std::size_t C = fa.dim(0), HW = fa.dim(1) * fa.dim(2);
      MaskU8 gtf = downscale_binary_mask(s.gt, fa.dim(1), fa.dim(2));
      masks[si].push_back(gtf);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = double(fa[c * HW + i]) - double(fb[c * HW + i]);
          (gtf[i] ? acc_changed[l][c] : acc_unchanged[l][c]).add(d);
        }
    }
  }

  std::vector<LayerHistogram> out(L);
  std::vector<std::vector<double>> chan_std(L);
  for (std::size_t l = 0; l < L; ++l) {
    Accum pooled_changed, pooled_unchanged;
    chan_std[l].resize(metas[l].channels);
    for (std::size_t c = 0; c < metas[l].channels; ++c) {
      pooled_changed.merge(acc_changed[l][c]);
      pooled_unchanged.merge(acc_unchanged[l][c]);
      Accum both = acc_changed[l][c];
      both.merge(acc_unchanged[l][c]);
      const double sd = std::sqrt(both.variance());
      chan_std[l][c] = sd > 0 ? sd : 1.0;
    }
    LayerHistogram& h = out[l];
    h.layer_id = metas[l].layer_id;
    h.changed_count = pooled_changed.n;
    h.unchanged_count = pooled_unchanged.n;
    h.changed_empty = pooled_changed.n == 0;
    h.unchanged_empty = pooled_unchanged.n == 0;
    h.changed_moments = pooled_changed.moments();
    h.unchanged_moments = pooled_unchanged.moments();

    // bin range from the pooled std of normalized values
    Accum norm_pooled;
    for (std::size_t c = 0; c < metas[l].channels; ++c) {
      Accum both = acc_changed[l][c];
      both.merge(acc_unchanged[l][c]);
      if (!both.n) continue;
      Accum scaled;
      scaled.n = both.n;
      scaled.s1 = both.s1 / chan_std[l][c];
      scaled.s2 = both.s2 / (chan_std[l][c] * chan_std[l][c]);
      norm_pooled.merge(scaled);
    }
    const double extent = 6.0 * std::sqrt(std::max(norm_pooled.variance(), 1e-12));
    h.bin_lo = -extent / 2.0;
    h.bin_hi = extent / 2.0;
    h.changed_density.assign(bins, 0.0);
    h.unchanged_density.assign(bins, 0.0);
  }

  // pass 2: per-channel histograms, averaged after unit-area normalization
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t C = metas[l].channels;
    std::vector<std::vector<std::uint64_t>> hist_ch(C, std::vector<std::uint64_t>(bins)),
        hist_un(C, std::vector<std::uint64_t>(bins));
    for (std::size_t si = 0; si < dataset.size(); ++si) {
      const auto& s = dataset[si];
      FeatureSet a = encoder.extract(s.t1);
      FeatureSet b = encoder.extract(s.t2);
      const auto& fa = a.levels[l];
      const auto& fb = b.levels[l];
      const std::size_t HW = fa.dim(1) * fa.dim(2);
      const MaskU8& gtf = masks[si][l];
      const double lo = out[l].bin_lo, hi = out[l].bin_hi;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) {
          const double d =
              (double(fa[c * HW + i]) - double(fb[c * HW + i])) / chan_std[l][c];
          int bi = int((d - lo) / (hi - lo) * double(bins));
          bi = std::clamp(bi, 0, int(bins) - 1);
          ++(gtf[i] ? hist_ch : hist_un)[c][std::size_t(bi)];
        }
    }
    const double binw = (out[l].bin_hi - out[l].bin_lo) / double(bins);
    auto average = [&](const std::vector<std::vector<std::uint64_t>>& per_chan,
                       std::vector<double>& dst) {
      std::size_t contributing = 0;
      for (std::size_t c = 0; c < C; ++c) {
        std::uint64_t total = 0;
        for (auto v : per_chan[c]) total += v;
        if (!total) continue;
        ++contributing;
        for (std::size_t bi = 0; bi < bins; ++bi)
          dst[bi] += double(per_chan[c][bi]) / (double(total) * binw);
      }
      if (contributing)
        for (auto& v : dst) v /= double(contributing);
    };
    average(hist_ch, out[l].changed_density);
    average(hist_un, out[l].unchanged_density);
  }
  return out;
}

/// Moment report for one group; raises on empty groups.
inline GroupMoments moment_report(const LayerHistogram& h, bool changed_group) {
  const GroupMoments& m = changed_group ? h.changed_moments : h.unchanged_moments;
  require(m.count > 0, ErrorClass::invalid_argument,
          std::string("moment_report: empty ") +
              (changed_group ? "changed" : "unchanged") + " group at layer " +
              std::to_string(h.layer_id));
  return m;
}

/// Equal-weight average over per-dataset histogram runs (all runs must share
/// layer ids, bin counts and ranges are averaged pointwise on densities).
inline std::vector<LayerHistogram> average_histograms(
    const std::vector<std::vector<LayerHistogram>>& runs) {
  require(!runs.empty(), ErrorClass::invalid_argument, "no histogram runs");
  std::vector<LayerHistogram> out = runs[0];
  for (std::size_t r = 1; r < runs.size(); ++r) {
    require(runs[r].size() == out.size(), ErrorClass::shape_mismatch,
            "histogram runs differ in layer count");
    for (std::size_t l = 0; l < out.size(); ++l) {
      for (std::size_t b = 0; b < out[l].changed_density.size(); ++b) {
        out[l].changed_density[b] += runs[r][l].changed_density[b];
        out[l].unchanged_density[b] += runs[r][l].unchanged_density[b];
      }
      out[l].bin_lo += runs[r][l].bin_lo;
      out[l].bin_hi += runs[r][l].bin_hi;
      out[l].changed_count += runs[r][l].changed_count;
      out[l].unchanged_count += runs[r][l].unchanged_count;
    }
  }
  const double n = double(runs.size());
  for (auto& l : out) {
    for (auto& v : l.changed_density) v /= n;
    for (auto& v : l.unchanged_density) v /= n;
    l.bin_lo /= n;
    l.bin_hi /= n;
  }
  return out;
}

inline void write_histogram_csv(const std::filesystem::path& path,
                                const LayerHistogram& h) {
  std::ofstream os(path);
  require(bool(os), ErrorClass::io_failure, "cannot write " + path.string());
  os << "bin_center,changed_density,unchanged_density\n";
  const std::size_t bins = h.changed_density.size();
  const double binw = (h.bin_hi - h.bin_lo) / double(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double center = h.bin_lo + (double(b) + 0.5) * binw;
    os << center << ',' << h.changed_density[b] << ',' << h.unchanged_density[b]
       << '\n';
  }
}

inline void write_histogram_plot(const std::filesystem::path& path,
                                 const LayerHistogram& h) {
  Plot plot;
  const std::size_t bins = h.changed_density.size();
  const double binw = (h.bin_hi - h.bin_lo) / double(bins);
  Plot::Series changed{{}, {}, 214, 69, 65};    // red: changed
  Plot::Series unchanged{{}, {}, 65, 105, 225}; // blue: unchanged
  for (std::size_t b = 0; b < bins; ++b) {
    const double center = h.bin_lo + (double(b) + 0.5) * binw;
    changed.x.push_back(center);
    changed.y.push_back(h.changed_density[b]);
    unchanged.x.push_back(center);
    unchanged.y.push_back(h.unchanged_density[b]);
  }
  plot.add_series(std::move(unchanged));
  plot.add_series(std::move(changed));
  plot.render(path);
}

inline void write_moments_csv(const std::filesystem::path& path,
                              const std::vector<LayerHistogram>& layers) {
  std::ofstream os(path);
  require(bool(os), ErrorClass::io_failure, "cannot write " + path.string());
  os << "layer_id,group,count,mean,variance,excess_kurtosis,zero_mean_violation\n";
  for (const auto& h : layers) {
    auto row = [&](const char* group, const GroupMoments& m) {
      os << h.layer_id << ',' << group << ',' << m.count << ',' << m.mean << ','
         << m.variance << ',' << m.excess_kurtosis << ','
         << (m.zero_mean_violation ? 1 : 0) << '\n';
    };
    row("changed", h.changed_moments);
    row("unchanged", h.unchanged_moments);
  }
}

}  // namespace mason
