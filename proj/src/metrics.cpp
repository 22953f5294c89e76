#include "selab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "fft.hpp"
#include "selab/error.hpp"
#include "selab/losses.hpp"
#include "selab/ops.hpp"

namespace selab::metrics {

double eval_sisdr(std::span<const float> est, std::span<const float> ref) {
  if (est.size() != ref.size())
    throw ShapeError("eval_sisdr: length mismatch " + std::to_string(est.size()) + " vs " +
                     std::to_string(ref.size()));
  double ee = 0, dot = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ee += double(ref[i]) * ref[i];
    dot += double(est[i]) * ref[i];
  }
  if (ee == 0) throw Error("eval_sisdr: reference is silent");
  const double eps = losses::kSisdrEps;
  const double alpha = dot / std::max(ee, eps);
  double et = 0, er = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double t = alpha * ref[i];
    et += t * t;
    er += (est[i] - t) * (est[i] - t);
  }
  const double db = 10.0 * std::log10(std::max(et, eps) / std::max(er, eps));
  return std::clamp(db, -losses::kSisdrClampDb, losses::kSisdrClampDb);
}

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

// Hann window of length n without its zero end points.
std::vector<double> inner_hann(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (i + 1) / (n + 1));
  return w;
}

// Frame starts 0, hop, ... strictly below len - frame_len.
std::vector<std::size_t> frame_starts(std::size_t len, int frame_len, int hop) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i + frame_len < len; i += hop) s.push_back(i);
  return s;
}

// Drops frames of both signals where the clean frame is more than
// dyn_range dB below the loudest clean frame, then overlap-adds the rest.
std::pair<std::vector<double>, std::vector<double>> remove_silent_frames(std::span<const float> x,
                                                                         std::span<const float> y,
                                                                         const StoiParams& p) {
  const auto w = inner_hann(p.frame_len);
  const int hop = p.frame_len / 2;
  const auto starts = frame_starts(x.size(), p.frame_len, hop);
  std::vector<double> energy(starts.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t f = 0; f < starts.size(); ++f) {
    double e = 0;
    for (int i = 0; i < p.frame_len; ++i) {
      const double v = w[i] * x[starts[f] + i];
      e += v * v;
    }
    energy[f] = 20.0 * std::log10(std::sqrt(e) + kEps);
    top = std::max(top, energy[f]);
  }
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < starts.size(); ++f)
    if (top - p.dyn_range_db - energy[f] < 0) keep.push_back(starts[f]);
  const std::size_t n = keep.empty() ? 0 : (keep.size() - 1) * hop + p.frame_len;
  std::vector<double> xs(n, 0.0), ys(n, 0.0);
  for (std::size_t k = 0; k < keep.size(); ++k)
    for (int i = 0; i < p.frame_len; ++i) {
      xs[k * hop + i] += w[i] * x[keep[k] + i];
      ys[k * hop + i] += w[i] * y[keep[k] + i];
    }
  return {xs, ys};
}

// Third-octave band energies: [bands][frames].
std::vector<std::vector<double>> band_envelopes(const std::vector<double>& sig, const StoiParams& p,
                                                const std::vector<std::pair<int, int>>& band_bins) {
  const auto w = inner_hann(p.frame_len);
  const int hop = p.frame_len / 2;
  const auto starts = frame_starts(sig.size(), p.frame_len, hop);
  dsp::RealFft fft(p.fft_size);
  std::vector<double> buf(p.fft_size);
  std::vector<std::complex<double>> spec(fft.bins());
  std::vector<std::vector<double>> out(p.bands, std::vector<double>(starts.size()));
  for (std::size_t f = 0; f < starts.size(); ++f) {
    std::fill(buf.begin(), buf.end(), 0.0);
    for (int i = 0; i < p.frame_len; ++i) buf[i] = w[i] * sig[starts[f] + i];
    fft.forward(buf, spec);
    for (int b = 0; b < p.bands; ++b) {
      double e = 0;
      for (int k = band_bins[b].first; k < band_bins[b].second; ++k) e += std::norm(spec[k]);
      out[b][f] = std::sqrt(e);
    }
  }
  return out;
}

// [first, last) FFT bins of each band, each edge snapped to the nearest bin.
std::vector<std::pair<int, int>> third_octave_bins(const StoiParams& p) {
  const int nbins = p.fft_size / 2 + 1;
  auto nearest = [&](double hz) {
    int best = 0;
    double dist = std::numeric_limits<double>::infinity();
    for (int k = 0; k < nbins; ++k) {
      const double d = std::abs(double(k) * p.sample_rate / p.fft_size - hz);
      if (d < dist) {
        dist = d;
        best = k;
      }
    }
    return best;
  };
  std::vector<std::pair<int, int>> out;
  for (int b = 0; b < p.bands; ++b)
    out.emplace_back(nearest(p.min_freq * std::pow(2.0, (2.0 * b - 1) / 6)),
                     nearest(p.min_freq * std::pow(2.0, (2.0 * b + 1) / 6)));
  return out;
}

}  // namespace

double eval_stoi(std::span<const float> est, std::span<const float> ref, const StoiParams& p) {
  if (est.size() != ref.size())
    throw ShapeError("eval_stoi: length mismatch " + std::to_string(est.size()) + " vs " +
                     std::to_string(ref.size()));
  const double min_seconds = double(p.segment) * (p.frame_len / 2) / p.sample_rate;
  if (double(ref.size()) / p.sample_rate < min_seconds)
    throw Error("eval_stoi: input of " + std::to_string(ref.size()) + " samples is shorter than one " +
                std::to_string(int(std::lround(min_seconds * 1000))) + " ms segment");
  auto [xs, ys] = remove_silent_frames(ref, est, p);
  const auto bins = third_octave_bins(p);
  auto xb = band_envelopes(xs, p, bins);
  auto yb = band_envelopes(ys, p, bins);
  const std::size_t frames = xb[0].size();
  const std::size_t n = p.segment;
  if (frames < n)
    throw Error("eval_stoi: only " + std::to_string(frames) + " non-silent frames, need " + std::to_string(n));
  const double clip = 1.0 + std::pow(10.0, -p.beta_db / 20.0);
  double total = 0;
  std::size_t count = 0;
  std::vector<double> xv(n), yv(n);
  for (std::size_t m = n; m <= frames; ++m) {
    for (int b = 0; b < p.bands; ++b) {
      double xn = 0, yn = 0;
      for (std::size_t j = 0; j < n; ++j) {
        xv[j] = xb[b][m - n + j];
        yv[j] = yb[b][m - n + j];
        xn += xv[j] * xv[j];
        yn += yv[j] * yv[j];
      }
      const double scale = std::sqrt(xn) / (std::sqrt(yn) + kEps);
      double xm = 0, ym = 0;
      for (std::size_t j = 0; j < n; ++j) {
        yv[j] = std::min(yv[j] * scale, xv[j] * clip);
        xm += xv[j];
        ym += yv[j];
      }
      xm /= n;
      ym /= n;
      double sxy = 0, sxx = 0, syy = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double a = xv[j] - xm, c = yv[j] - ym;
        sxy += a * c;
        sxx += a * a;
        syy += c * c;
      }
      total += sxy / ((std::sqrt(sxx) + kEps) * (std::sqrt(syy) + kEps));
      ++count;
    }
  }
  return std::clamp(total / count, -1.0, 1.0);
}

// ---- report ----------------------------------------------------------------

namespace {

Aggregate aggregate(const std::vector<EvalRow>& rows, double EvalRow::*field) {
  Aggregate a;
  if (rows.empty()) return a;
  for (const auto& r : rows) a.mean += r.*field;
  a.mean /= rows.size();
  double ss = 0;
  for (const auto& r : rows) ss += (r.*field - a.mean) * (r.*field - a.mean);
  a.std = std::sqrt(ss / rows.size());
  return a;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

Aggregate EvalReport::sisdr() const { return aggregate(rows, &EvalRow::sisdr_db); }
Aggregate EvalReport::stoi() const { return aggregate(rows, &EvalRow::stoi); }
Aggregate EvalReport::input_sisdr() const { return aggregate(rows, &EvalRow::input_sisdr_db); }
Aggregate EvalReport::input_stoi() const { return aggregate(rows, &EvalRow::input_stoi); }

std::string EvalReport::to_tsv() const {
  std::ostringstream out;
  out << "id\tsisdr_db\tstoi";
  if (has_input) out << "\tinput_sisdr_db\tinput_stoi";
  out << '\n';
  for (const auto& r : rows) {
    out << r.id << '\t' << fmt(r.sisdr_db) << '\t' << fmt(r.stoi);
    if (has_input) out << '\t' << fmt(r.input_sisdr_db) << '\t' << fmt(r.input_stoi);
    out << '\n';
  }
  for (auto [label, pick] : {std::pair{"# mean", &Aggregate::mean}, std::pair{"# std", &Aggregate::std}}) {
    out << label << '\t' << fmt(sisdr().*pick) << '\t' << fmt(stoi().*pick);
    if (has_input) out << '\t' << fmt(input_sisdr().*pick) << '\t' << fmt(input_stoi().*pick);
    out << '\n';
  }
  out << "# count\t" << rows.size() << '\n';
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"id", r.id}, {"sisdr_db", r.sisdr_db}, {"stoi", r.stoi}};
    if (has_input) {
      row["input_sisdr_db"] = r.input_sisdr_db;
      row["input_stoi"] = r.input_stoi;
    }
    j["rows"].push_back(row);
  }
  auto agg = [](Aggregate a) { return nlohmann::json{{"mean", a.mean}, {"std", a.std}}; };
  j["aggregate"] = {{"count", rows.size()}, {"sisdr_db", agg(sisdr())}, {"stoi", agg(stoi())}};
  if (has_input) {
    j["aggregate"]["input_sisdr_db"] = agg(input_sisdr());
    j["aggregate"]["input_stoi"] = agg(input_stoi());
  }
  return j.dump(2);
}

// ---- evaluation ------------------------------------------------------------

Tensor<float> enhance(const model::Gcrn<float>& model, const Tensor<float>& noisy_spec, const Tensor<float>& condition,
                      const dsp::StftConfig& stft) {
  NoGradGuard no_grad;
  return dsp::istft_tensor(model.forward(noisy_spec, condition), stft);
}

namespace {

data::IteratorOptions static_options(const EvalOptions& opts) {
  data::IteratorOptions o;
  o.mixing = data::MixingMode::Static;
  o.peak = opts.peak;
  o.stft = opts.stft;
  o.batch = 1;
  return o;
}

std::span<const float> prefix(const std::vector<float>& v, std::size_t n) { return {v.data(), n}; }

void score_input(EvalRow& row, const data::Mixture& m, std::size_t n) {
  row.input_sisdr_db = eval_sisdr(prefix(m.noisy.samples, n), prefix(m.clean.samples, n));
  row.input_stoi = eval_stoi(prefix(m.noisy.samples, n), prefix(m.clean.samples, n));
}

}  // namespace

EvalReport evaluate(const model::Gcrn<float>& model, const data::MixManifest& manifest, const data::Loader& loader,
                    teacher::TeacherSource* teacher, const EvalOptions& opts) {
  const bool concat = model.config().conditioning == model::Conditioning::Concat;
  if (concat && !teacher)
    throw ConfigError(
        "teacher.source: this model is conditioned on teacher embeddings and cannot run without a teacher");
  const auto iopts = static_options(opts);
  EvalReport report;
  report.has_input = opts.include_input;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    auto mix = data::make_item(rec, i, 0, iopts, loader);
    data::Batch batch;
    batch.noisy_spec = data::stack_specs({&mix.noisy}, opts.stft);
    batch.clean_spec = data::stack_specs({&mix.clean}, opts.stft);
    batch.noisy_wave = data::stack_waves({&mix.noisy});
    batch.clean_wave = data::stack_waves({&mix.clean});
    batch.record_index = {i};
    batch.snr_db = {mix.snr_db};
    Tensor<float> spec = batch.noisy_spec, cond;
    if (concat) {
      auto layers = teacher->noisy(batch);
      if (layers.dim(3) != model.config().condition_dim)
        throw ConfigError("teacher.source: embeddings have dim " + std::to_string(layers.dim(3)) +
                          ", model expects " + std::to_string(model.config().condition_dim));
      if (!opts.layer_logits.empty()) {
        auto logits = Tensor<float>::from({std::int64_t(opts.layer_logits.size())}, opts.layer_logits);
        cond = teacher::weighted_sum(layers, logits);
      } else {
        cond = teacher::last_layer(layers);
      }
      const std::int64_t t = std::min(spec.dim(2), cond.dim(1));
      spec = ops::slice(spec, 2, 0, t);
      cond = ops::slice(cond, 1, 0, t);
    }
    auto est = enhance(model, spec, cond, opts.stft);
    const std::size_t n = est.dim(1);
    EvalRow row;
    row.id = data::record_stem(i, rec);
    row.sisdr_db = eval_sisdr(est.data(), prefix(mix.clean.samples, n));
    row.stoi = eval_stoi(est.data(), prefix(mix.clean.samples, n));
    if (opts.include_input) score_input(row, mix, n);
    report.rows.push_back(std::move(row));
  }
  return report;
}

EvalReport evaluate_input(const data::MixManifest& manifest, const data::Loader& loader, const EvalOptions& opts) {
  const auto iopts = static_options(opts);
  EvalReport report;
  report.has_input = true;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    auto mix = data::make_item(rec, i, 0, iopts, loader);
    EvalRow row;
    row.id = data::record_stem(i, rec);
    score_input(row, mix, mix.clean.samples.size());
    row.sisdr_db = row.input_sisdr_db;
    row.stoi = row.input_stoi;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace selab::metrics
