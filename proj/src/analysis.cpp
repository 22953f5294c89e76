#include "selab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "selab/error.hpp"

namespace selab::analysis {

std::string to_string(Metric m) { return m == Metric::Correlation ? "corr" : "l2"; }

Metric parse_metric(const std::string& s) {
  if (s == "corr") return Metric::Correlation;
  if (s == "l2") return Metric::Euclidean;
  throw ConfigError("analysis.metric: unknown metric '" + s + "' (expected corr or l2)");
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * double(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::int64_t lag_frames(const FrameSequence& e, double lag_ms) {
  const double ratio = lag_ms / e.hop_ms;
  const double r = std::round(ratio);
  if (!(lag_ms > 0) || std::abs(ratio - r) > 1e-9)
    throw ConfigError("analysis.lags: " + fmt(lag_ms) + " ms is not a positive multiple of the " + fmt(e.hop_ms) +
                      " ms hop");
  const auto k = static_cast<std::int64_t>(r);
  if (k >= e.frames)
    throw Error("analysis: lag of " + fmt(lag_ms) + " ms needs more than " + std::to_string(e.frames) +
                " frames");
  return k;
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
  BoxStats b;
  b.count = values.size();
  if (values.empty()) return b;
  std::sort(values.begin(), values.end());
  b.q1 = quantile(values, 0.25);
  b.median = quantile(values, 0.5);
  b.q3 = quantile(values, 0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_lo = b.q1;
  b.whisker_hi = b.q3;
  double sum = 0;
  for (double v : values) {
    sum += v;
    if (v < lo_fence || v > hi_fence) {
      ++b.outliers;
      continue;
    }
    b.whisker_lo = std::min(b.whisker_lo, v);
    b.whisker_hi = std::max(b.whisker_hi, v);
  }
  b.mean = sum / values.size();
  return b;
}

FrameSequence FrameSequence::from(const teacher::EmbeddingSequence& e, std::int64_t layer) {
  if (layer < 0) layer += e.layers;
  if (layer < 0 || layer >= e.layers)
    throw ConfigError("analysis.layer: layer " + std::to_string(layer) + " out of range for " +
                      std::to_string(e.layers) + " layers");
  FrameSequence f;
  f.frames = e.frames;
  f.dim = e.dim;
  f.hop_ms = 1000.0 * e.hop_samples / e.sample_rate;
  const auto begin = e.data.begin() + layer * e.frames * e.dim;
  f.data.assign(begin, begin + e.frames * e.dim);
  return f;
}

LagSamples lag_correlation(const FrameSequence& e, double lag_ms) {
  const std::int64_t k = lag_frames(e, lag_ms);
  const std::int64_t d = e.dim;
  // Centered frames and their sums of squares.
  std::vector<double> centered(e.frames * d), ss(e.frames);
  for (std::int64_t t = 0; t < e.frames; ++t) {
    const float* f = e.frame(t);
    double m = 0;
    for (std::int64_t i = 0; i < d; ++i) m += f[i];
    m /= d;
    for (std::int64_t i = 0; i < d; ++i) {
      centered[t * d + i] = f[i] - m;
      ss[t] += centered[t * d + i] * centered[t * d + i];
    }
  }
  LagSamples out{lag_ms, Metric::Correlation, {}, 0};
  for (std::int64_t t = 0; t + k < e.frames; ++t) {
    if (ss[t] / d < 1e-12 || ss[t + k] / d < 1e-12) {
      ++out.skipped;
      continue;
    }
    double dot = 0;
    for (std::int64_t i = 0; i < d; ++i) dot += centered[t * d + i] * centered[(t + k) * d + i];
    out.values.push_back(std::clamp(dot / std::sqrt(ss[t] * ss[t + k]), -1.0, 1.0));
  }
  return out;
}

LagSamples lag_euclidean(const FrameSequence& e, double lag_ms, bool normalized) {
  const std::int64_t k = lag_frames(e, lag_ms);
  double scale = 1;
  if (normalized) {
    double norms = 0;
    for (std::int64_t t = 0; t < e.frames; ++t) {
      double s = 0;
      for (std::int64_t i = 0; i < e.dim; ++i) s += double(e.frame(t)[i]) * e.frame(t)[i];
      norms += std::sqrt(s);
    }
    const double mean_norm = norms / e.frames;
    scale = mean_norm > 0 ? 1.0 / mean_norm : 0.0;
  }
  LagSamples out{lag_ms, Metric::Euclidean, {}, 0};
  for (std::int64_t t = 0; t + k < e.frames; ++t) {
    double s = 0;
    for (std::int64_t i = 0; i < e.dim; ++i) {
      const double diff = double(e.frame(t)[i]) - e.frame(t + k)[i];
      s += diff * diff;
    }
    out.values.push_back(std::sqrt(s) * scale);
  }
  return out;
}

AnalysisResult analyze(const std::vector<std::pair<std::string, FrameSequence>>& sequences,
                       const std::vector<double>& lags_ms, Metric metric, bool normalized) {
  if (lags_ms.empty()) throw ConfigError("analysis.lags: at least one lag is required");
  AnalysisResult r;
  r.metric = metric;
  r.normalized = normalized;
  for (double lag : lags_ms) r.pooled.push_back({lag, metric, {}, 0});
  for (const auto& [path, seq] : sequences) {
    FileAnalysis fa{path, {}};
    for (std::size_t i = 0; i < lags_ms.size(); ++i) {
      auto s = metric == Metric::Correlation ? lag_correlation(seq, lags_ms[i])
                                             : lag_euclidean(seq, lags_ms[i], normalized);
      r.pooled[i].values.insert(r.pooled[i].values.end(), s.values.begin(), s.values.end());
      r.pooled[i].skipped += s.skipped;
      fa.lags.push_back(std::move(s));
    }
    r.files.push_back(std::move(fa));
  }
  return r;
}

AnalysisResult analyze(const std::vector<std::string>& paths, const std::vector<double>& lags_ms, Metric metric,
                       bool normalized, std::int64_t layer) {
  std::vector<std::pair<std::string, FrameSequence>> seqs;
  for (const auto& p : paths) seqs.emplace_back(p, FrameSequence::from(teacher::load_embeddings(p), layer));
  return analyze(seqs, lags_ms, metric, normalized);
}

std::string AnalysisResult::stats_tsv() const {
  std::ostringstream out;
  if (metric == Metric::Correlation)
    out << "# metric: Pearson correlation across the feature dimension for each frame pair\n";
  else
    out << "# metric: Euclidean distance between frame pairs"
        << (normalized ? ", divided by the mean frame norm of each sequence" : "") << "\n";
  out << "# whiskers: most extreme samples within 1.5 IQR of the quartiles\n";
  out << "scope\tlag_ms\tmetric\tcount\tskipped\tq1\tmedian\tq3\twhisker_lo\twhisker_hi\tmean\toutliers\n";
  auto row = [&](const std::string& scope, const LagSamples& s) {
    const auto b = box_stats(s.values);
    out << scope << '\t' << fmt(s.lag_ms) << '\t' << to_string(s.metric) << '\t' << b.count << '\t' << s.skipped
        << '\t' << fmt(b.q1) << '\t' << fmt(b.median) << '\t' << fmt(b.q3) << '\t' << fmt(b.whisker_lo) << '\t'
        << fmt(b.whisker_hi) << '\t' << fmt(b.mean) << '\t' << b.outliers << '\n';
  };
  for (const auto& s : pooled) row("pooled", s);
  for (const auto& f : files)
    for (const auto& s : f.lags) row(f.path, s);
  return out.str();
}

std::string AnalysisResult::samples_tsv() const {
  std::ostringstream out;
  out << "lag_ms\tpath\tvalue\n";
  for (const auto& f : files)
    for (const auto& s : f.lags)
      for (double v : s.values) out << fmt(s.lag_ms) << '\t' << f.path << '\t' << fmt(v) << '\n';
  return out.str();
}

std::vector<double> spectrogram_db(const dsp::Waveform& w, const dsp::StftConfig& stft) {
  auto s = dsp::stft(w, stft);
  std::vector<double> out(s.frames * s.bins);
  for (std::int64_t t = 0; t < s.frames; ++t)
    for (std::int64_t k = 0; k < s.bins; ++k)
      out[t * s.bins + k] = 20.0 * std::log10(s.magnitude(t, k) + kSpectrogramFloor);
  return out;
}

void export_spectrogram(const dsp::Waveform& w, const std::string& path, const dsp::StftConfig& stft) {
  const auto db = spectrogram_db(w, stft);
  const std::int64_t bins = stft.bins();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (std::size_t t = 0; t * bins < db.size(); ++t) {
    for (std::int64_t k = 0; k < bins; ++k) out << (k ? "," : "") << fmt(db[t * bins + k]);
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace selab::analysis
