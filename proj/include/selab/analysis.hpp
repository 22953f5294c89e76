#pragma once

// Frame-pair statistics of embedding sequences at fixed time lags, and
// log-magnitude spectrogram export.

#include <cstdint>
#include <string>
#include <vector>

#include "selab/dsp.hpp"
#include "selab/teacher.hpp"

namespace selab::analysis {

enum class Metric { Correlation, Euclidean };
std::string to_string(Metric m);
Metric parse_metric(const std::string& s);  // "corr" | "l2"

inline const std::vector<double> kDefaultLagsMs = {20, 60, 400, 1000, 2000};

// Box-plot summary. Quartiles use linear interpolation between order
// statistics; whiskers reach the most extreme samples within 1.5 IQR of
// the box.
struct BoxStats {
  std::size_t count = 0;
  double q1 = 0, median = 0, q3 = 0;
  double whisker_lo = 0, whisker_hi = 0;
  double mean = 0;
  std::size_t outliers = 0;
};
BoxStats box_stats(std::vector<double> values);

struct LagStats {
  double lag_ms = 0;
  Metric metric = Metric::Correlation;
  BoxStats box;
  // Frame pairs left out: near-constant frames for correlation.
  std::size_t skipped = 0;
};

struct LagSamples {
  double lag_ms = 0;
  Metric metric = Metric::Correlation;
  std::vector<double> values;
  std::size_t skipped = 0;

  LagStats stats() const { return {lag_ms, metric, box_stats(values), skipped}; }
};

// One layer of an embedding file viewed as frames x dim.
struct FrameSequence {
  std::int64_t frames = 0;
  std::int64_t dim = 0;
  double hop_ms = 20;
  std::vector<float> data;

  static FrameSequence from(const teacher::EmbeddingSequence& e, std::int64_t layer = -1);
  const float* frame(std::int64_t t) const { return data.data() + t * dim; }
};

// Pearson correlation across the feature axis between frames t and t + lag
// for every valid t. Pairs where either frame's variance is below 1e-12
// are skipped and counted. Throws ConfigError when the lag is not a
// positive multiple of the hop and Error when it spans the whole sequence.
LagSamples lag_correlation(const FrameSequence& e, double lag_ms);

// L2 distance between frames t and t + lag. With `normalized`, distances
// are divided by the mean frame norm of the sequence (0 for an all-zero
// sequence).
LagSamples lag_euclidean(const FrameSequence& e, double lag_ms, bool normalized = false);

struct FileAnalysis {
  std::string path;
  std::vector<LagSamples> lags;
};

struct AnalysisResult {
  Metric metric = Metric::Correlation;
  bool normalized = false;
  std::vector<FileAnalysis> files;
  // All frame pairs of all files pooled per lag.
  std::vector<LagSamples> pooled;

  // Header comments, then one row per (scope, lag): scope is "pooled" or a
  // file path.
  std::string stats_tsv() const;
  // lag_ms<TAB>path<TAB>value for every sample.
  std::string samples_tsv() const;
};

AnalysisResult analyze(const std::vector<std::string>& paths, const std::vector<double>& lags_ms, Metric metric,
                       bool normalized = false, std::int64_t layer = -1);
AnalysisResult analyze(const std::vector<std::pair<std::string, FrameSequence>>& sequences,
                       const std::vector<double>& lags_ms, Metric metric, bool normalized = false);

inline constexpr double kSpectrogramFloor = 1e-8;

// 20 log10(|X| + 1e-8) per frame and bin, frames x bins row-major.
std::vector<double> spectrogram_db(const dsp::Waveform& w, const dsp::StftConfig& stft = {});
// Writes the matrix as CSV, one frame per line, bins separated by commas.
void export_spectrogram(const dsp::Waveform& w, const std::string& path, const dsp::StftConfig& stft = {});

}  // namespace selab::analysis
