#include "selab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <numbers>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "selab/error.hpp"
#include "selab/wav.hpp"

namespace selab::data {

namespace fs = std::filesystem;

SnrSpec SnrSpec::range(double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError("snr: bounds must be finite");
  if (lo > hi) throw ConfigError("snr: range " + std::to_string(lo) + ":" + std::to_string(hi) + " has lo > hi");
  return {lo, hi};
}

namespace {

double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError(what + ": cannot parse '" + s + "' as a number");
  }
  if (used != s.size() || !std::isfinite(v)) throw ConfigError(what + ": cannot parse '" + s + "' as a number");
  return v;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

SnrSpec SnrSpec::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) return fixed(parse_double(text, "snr"));
  return range(parse_double(text.substr(0, colon), "snr lower bound"),
               parse_double(text.substr(colon + 1), "snr upper bound"));
}

double SnrSpec::draw(Rng& rng) const { return is_fixed() ? lo : rng.uniform(lo, hi); }

std::string SnrSpec::str() const { return is_fixed() ? fmt_double(lo) : fmt_double(lo) + ":" + fmt_double(hi); }

MixManifest parse_manifest(const std::string& text, const std::string& base_dir, std::int64_t default_crop) {
  MixManifest m;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto resolve = [&](const std::string& p) {
    if (base_dir.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base_dir) / p).string();
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto where = "manifest line " + std::to_string(line_no);
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 3 || fields.size() > 5)
      throw FormatError(where + ": expected 3 to 5 tab-separated fields, got " + std::to_string(fields.size()));
    MixRecord r;
    if (fields[0].empty() || fields[1].empty()) throw FormatError(where + ": empty path");
    r.clean_path = resolve(fields[0]);
    r.noise_path = resolve(fields[1]);
    try {
      r.snr = SnrSpec::parse(trim(fields[2]));
      r.crop_len = default_crop;
      if (fields.size() >= 4) {
        const double crop = parse_double(trim(fields[3]), "crop length");
        if (crop <= 0 || crop != std::floor(crop)) throw ConfigError("crop length must be a positive integer");
        r.crop_len = static_cast<std::int64_t>(crop);
      }
      if (fields.size() == 5) r.seed = std::stoull(trim(fields[4]));
    } catch (const ConfigError& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const std::exception&) {
      throw FormatError(where + ": bad seed '" + fields[4] + "'");
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

MixManifest load_manifest(const std::string& path, std::int64_t default_crop) {
  return parse_manifest(binary::read_file(path), fs::path(path).parent_path().string(), default_crop);
}

std::string format_manifest(const MixManifest& m) {
  std::string out;
  for (const auto& r : m.records) {
    out += r.clean_path + "\t" + r.noise_path + "\t" + r.snr.str() + "\t" + std::to_string(r.crop_len) + "\t" +
           std::to_string(r.seed) + "\n";
  }
  return out;
}

std::string record_stem(std::size_t index, const MixRecord& r) {
  char prefix[32];
  std::snprintf(prefix, sizeof prefix, "%05zu_", index);
  return prefix + fs::path(r.clean_path).stem().string();
}

// ---- mixing -------------------------------------------------------------------

Waveform fit_length(const Waveform& w, std::int64_t n, Rng* rng) {
  if (w.samples.empty()) throw ShapeError("fit_length: empty signal");
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(n);
  const auto len = static_cast<std::int64_t>(w.samples.size());
  if (len <= n) {
    for (std::int64_t i = 0; i < n; ++i) out.samples[i] = w.samples[i % len];
  } else {
    const std::int64_t offset = rng ? static_cast<std::int64_t>(rng->below(len - n + 1)) : 0;
    std::copy_n(w.samples.begin() + offset, n, out.samples.begin());
  }
  return out;
}

void peak_normalize(Waveform& w, double peak) {
  float m = 0;
  for (float s : w.samples) m = std::max(m, std::abs(s));
  if (m == 0) return;
  const double g = peak / m;
  for (auto& s : w.samples) s = static_cast<float>(s * g);
}

Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db) {
  if (!std::isfinite(snr_db)) throw ConfigError("mix_at_snr: snr must be finite");
  if (clean.samples.empty()) throw ShapeError("mix_at_snr: empty clean signal");
  const auto n = static_cast<std::int64_t>(clean.samples.size());
  const Waveform fitted = noise.samples.size() == clean.samples.size() ? noise : fit_length(noise, n, nullptr);
  double ec = 0, en = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    ec += static_cast<double>(clean.samples[i]) * clean.samples[i];
    en += static_cast<double>(fitted.samples[i]) * fitted.samples[i];
  }
  if (ec == 0) throw Error("mix_at_snr: clean signal has zero energy");
  if (en == 0) throw Error("mix_at_snr: noise signal has zero energy");
  Mixture m;
  m.snr_db = snr_db;
  m.noise_gain = std::sqrt(ec / (en * std::pow(10.0, snr_db / 10.0)));
  m.clean = clean;
  m.noisy = clean;
  for (std::int64_t i = 0; i < n; ++i)
    m.noisy.samples[i] = static_cast<float>(clean.samples[i] + m.noise_gain * fitted.samples[i]);
  return m;
}

// ---- loaders ------------------------------------------------------------------

Loader wav_loader() {
  struct Cache {
    std::mutex mutex;
    std::map<std::string, Waveform> clips;
  };
  auto cache = std::make_shared<Cache>();
  return [cache](const std::string& path) {
    {
      std::lock_guard lock(cache->mutex);
      if (auto it = cache->clips.find(path); it != cache->clips.end()) return it->second;
    }
    Waveform w = dsp::read_wav(path);
    std::lock_guard lock(cache->mutex);
    cache->clips.emplace(path, w);
    return w;
  };
}

Loader memory_loader(std::shared_ptr<const std::map<std::string, Waveform>> clips) {
  return [clips](const std::string& name) {
    auto it = clips->find(name);
    if (it == clips->end()) throw IoError("no in-memory clip named " + name);
    return it->second;
  };
}

// ---- iteration ----------------------------------------------------------------

namespace {

Waveform load_for_record(const Loader& load, const std::string& path, std::size_t index) {
  const auto prefix = "manifest record " + std::to_string(index) + " (" + path + "): ";
  try {
    return load(path);
  } catch (const FormatError& e) {
    throw FormatError(prefix + e.what());
  } catch (const Error& e) {
    throw IoError(prefix + e.what());
  }
}

Waveform crop_or_pad(const Waveform& w, std::int64_t n, Rng* rng) {
  const auto len = static_cast<std::int64_t>(w.samples.size());
  if (len >= n) {
    Waveform out;
    out.sample_rate = w.sample_rate;
    const std::int64_t offset = rng ? static_cast<std::int64_t>(rng->below(len - n + 1)) : 0;
    out.samples.assign(w.samples.begin() + offset, w.samples.begin() + offset + n);
    return out;
  }
  Waveform out = w;
  out.samples.resize(n, 0.0f);
  return out;
}

}  // namespace

Mixture make_item(const MixRecord& r, std::size_t index, std::int64_t epoch, const IteratorOptions& opts,
                  const Loader& load) {
  const std::uint64_t base = r.seed != 0 ? r.seed : derive_seed(opts.seed, index);
  const bool dynamic = opts.mixing == MixingMode::Dynamic;
  Rng rng(dynamic ? derive_seed(base, static_cast<std::uint64_t>(epoch) + 1) : derive_seed(base, 0));
  Rng* crop_rng = dynamic ? &rng : nullptr;

  Waveform clean = crop_or_pad(load_for_record(load, r.clean_path, index), r.crop_len, crop_rng);
  peak_normalize(clean, opts.peak);
  Waveform noise = fit_length(load_for_record(load, r.noise_path, index), r.crop_len, crop_rng);
  peak_normalize(noise, opts.peak);
  const double snr = r.snr.draw(rng);
  try {
    return mix_at_snr(clean, noise, snr);
  } catch (const Error& e) {
    throw Error("manifest record " + std::to_string(index) + ": " + e.what());
  }
}

MixIterator::MixIterator(MixManifest manifest, IteratorOptions opts, Loader load)
    : manifest_(std::move(manifest)), opts_(std::move(opts)), load_(std::move(load)) {
  opts_.stft.validate();
  if (manifest_.records.empty()) throw ConfigError("data: manifest has no records");
  if (opts_.batch == 0) throw ConfigError("data: batch must be positive");
  if (opts_.workers == 0) opts_.workers = 1;
  const auto crop = manifest_.records.front().crop_len;
  for (std::size_t i = 0; i < manifest_.records.size(); ++i) {
    const auto& r = manifest_.records[i];
    if (r.crop_len != crop)
      throw ConfigError("data: record " + std::to_string(i) + " crop length " + std::to_string(r.crop_len) +
                        " differs from " + std::to_string(crop) + "; batches need equal lengths");
    if (r.crop_len < opts_.stft.window_len)
      throw ConfigError("data: crop length " + std::to_string(r.crop_len) + " is shorter than one STFT window");
  }
  start_epoch(0);
}

void MixIterator::start_epoch(std::int64_t epoch) {
  epoch_ = epoch;
  cursor_ = 0;
  order_.resize(manifest_.records.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (opts_.shuffle) {
    std::mt19937_64 engine(derive_seed(opts_.seed, static_cast<std::uint64_t>(epoch), 0x5eedULL));
    std::shuffle(order_.begin(), order_.end(), engine);
  }
}

std::optional<Batch> MixIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t count = std::min(opts_.batch, order_.size() - cursor_);
  if (count < opts_.batch && opts_.drop_last) {
    cursor_ = order_.size();
    return std::nullopt;
  }
  std::vector<std::size_t> idx(order_.begin() + cursor_, order_.begin() + cursor_ + count);
  cursor_ += count;

  std::vector<Mixture> items(count);
  std::vector<std::exception_ptr> errors(count);
  const std::size_t workers = std::min(opts_.workers, count);
  auto work = [&](std::size_t w) {
    for (std::size_t j = w; j < count; j += workers) {
      try {
        items[j] = make_item(manifest_.records[idx[j]], idx[j], epoch_, opts_, load_);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<const Waveform*> noisy, clean;
  Batch b;
  for (std::size_t j = 0; j < count; ++j) {
    noisy.push_back(&items[j].noisy);
    clean.push_back(&items[j].clean);
    b.snr_db.push_back(items[j].snr_db);
  }
  b.record_index = std::move(idx);
  b.epoch = epoch_;
  b.noisy_wave = stack_waves(noisy);
  b.clean_wave = stack_waves(clean);
  b.noisy_spec = stack_specs(noisy, opts_.stft);
  b.clean_spec = stack_specs(clean, opts_.stft);
  return b;
}

Batch MixIterator::next_cycling() {
  if (auto b = next()) return std::move(*b);
  start_epoch(epoch_ + 1);
  if (auto b = next()) return std::move(*b);
  throw ConfigError("data: epoch yields no batch (drop_last with fewer records than one batch)");
}

Tensor<float> stack_waves(const std::vector<const Waveform*>& waves) {
  if (waves.empty()) throw ShapeError("stack_waves: no waveforms");
  const auto n = static_cast<std::int64_t>(waves.front()->samples.size());
  std::vector<float> data;
  data.reserve(waves.size() * n);
  for (const auto* w : waves) {
    if (static_cast<std::int64_t>(w->samples.size()) != n) throw ShapeError("stack_waves: unequal lengths");
    data.insert(data.end(), w->samples.begin(), w->samples.end());
  }
  return Tensor<float>::from({static_cast<std::int64_t>(waves.size()), n}, std::move(data));
}

Tensor<float> stack_specs(const std::vector<const Waveform*>& waves, const dsp::StftConfig& cfg) {
  if (waves.empty()) throw ShapeError("stack_specs: no waveforms");
  std::vector<float> data;
  std::int64_t frames = -1;
  for (const auto* w : waves) {
    auto s = dsp::stft(w->samples, cfg);
    if (frames >= 0 && s.frames != frames) throw ShapeError("stack_specs: unequal frame counts");
    frames = s.frames;
    data.insert(data.end(), s.real.begin(), s.real.end());
    data.insert(data.end(), s.imag.begin(), s.imag.end());
  }
  return Tensor<float>::from({static_cast<std::int64_t>(waves.size()), 2, frames, cfg.bins()}, std::move(data));
}

// ---- synthetic audio ----------------------------------------------------------

namespace {

// Two-pole resonator with unity-ish peak gain.
struct Resonator {
  double a1 = 0, a2 = 0, b0 = 0, y1 = 0, y2 = 0;
  Resonator(double freq, double bandwidth, double fs) {
    const double r = std::exp(-std::numbers::pi * bandwidth / fs);
    a1 = 2 * r * std::cos(2 * std::numbers::pi * freq / fs);
    a2 = -r * r;
    b0 = 1 - r;
  }
  double operator()(double x) {
    const double y = b0 * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

double hann_env(std::int64_t i, std::int64_t len) {
  return 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (i + 0.5) / len);
}

}  // namespace

Waveform synth_speech(std::int64_t n, std::uint64_t seed, int sample_rate) {
  Rng rng(derive_seed(seed, 0x5bee));
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0f);
  const double fs = sample_rate;
  const double speaker_f0 = rng.uniform(95, 220);
  std::int64_t pos = 0;
  bool after_pause = true;  // open with a voiced syllable, never two pauses in a row
  while (pos < n) {
    double kind = rng.uniform();
    if (after_pause) kind *= 0.6;
    after_pause = kind >= 0.75;
    if (kind < 0.6) {
      const auto len = static_cast<std::int64_t>(rng.uniform(0.12, 0.3) * fs);
      const double f0a = speaker_f0 * rng.uniform(0.85, 1.15), f0b = f0a * rng.uniform(0.8, 1.2);
      Resonator f1(rng.uniform(300, 800), 80, fs), f2(rng.uniform(900, 2300), 110, fs),
          f3(rng.uniform(2400, 3200), 150, fs);
      const double amp = rng.uniform(0.5, 1.0);
      double phase = 0;
      for (std::int64_t i = 0; i < len && pos + i < n; ++i) {
        const double f0 = f0a + (f0b - f0a) * i / len;
        phase += 2 * std::numbers::pi * f0 / fs;
        double src = 0;
        const int harmonics = static_cast<int>(4000 / f0);
        for (int h = 1; h <= harmonics; ++h) src += std::sin(h * phase) / h;
        const double v = f1(src) * 4 + f2(src) * 3 + f3(src) * 2;
        w.samples[pos + i] = static_cast<float>(amp * hann_env(i, len) * v);
      }
      pos += len;
    } else if (kind < 0.75) {
      const auto len = static_cast<std::int64_t>(rng.uniform(0.06, 0.15) * fs);
      Resonator res(rng.uniform(3000, 6000), 1500, fs);
      double prev = 0;
      for (std::int64_t i = 0; i < len && pos + i < n; ++i) {
        const double x = rng.normal();
        const double hp = x - prev;
        prev = x;
        w.samples[pos + i] = static_cast<float>(0.6 * hann_env(i, len) * res(hp));
      }
      pos += len;
    } else {
      pos += static_cast<std::int64_t>(rng.uniform(0.05, 0.2) * fs);
    }
  }
  peak_normalize(w, 0.5);
  return w;
}

Waveform synth_noise(std::int64_t n, std::uint64_t seed, NoiseKind kind, int sample_rate) {
  Rng rng(derive_seed(seed, 0x0015e));
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(n, 0.0f);
  switch (kind) {
    case NoiseKind::White:
      for (auto& s : w.samples) s = static_cast<float>(rng.normal());
      break;
    case NoiseKind::Pink: {
      // Paul Kellet's economy pink filter
      double b0 = 0, b1 = 0, b2 = 0;
      for (auto& s : w.samples) {
        const double x = rng.normal();
        b0 = 0.99765 * b0 + x * 0.0990460;
        b1 = 0.96300 * b1 + x * 0.2965164;
        b2 = 0.57000 * b2 + x * 1.0526913;
        s = static_cast<float>(b0 + b1 + b2 + x * 0.1848);
      }
      break;
    }
    case NoiseKind::Babble:
      for (int k = 0; k < 5; ++k) {
        auto talker = synth_speech(n, derive_seed(seed, 0xbab, k), sample_rate);
        for (std::int64_t i = 0; i < n; ++i) w.samples[i] += talker.samples[i];
      }
      break;
    case NoiseKind::Hum: {
      const double f = rng.uniform(48, 62);
      for (std::int64_t i = 0; i < n; ++i) {
        double v = 0;
        for (int h = 1; h <= 8; ++h) v += std::sin(2 * std::numbers::pi * f * h * i / sample_rate) / h;
        w.samples[i] = static_cast<float>(v + 0.2 * rng.normal());
      }
      break;
    }
  }
  peak_normalize(w, 0.5);
  return w;
}

SyntheticCorpus synthetic_corpus(std::size_t count, std::int64_t length, SnrSpec snr, std::uint64_t seed) {
  SyntheticCorpus c;
  c.clips = std::make_shared<std::map<std::string, Waveform>>();
  const NoiseKind kinds[] = {NoiseKind::Pink, NoiseKind::White, NoiseKind::Babble, NoiseKind::Hum};
  for (std::size_t i = 0; i < count; ++i) {
    const auto ci = "clean_" + std::to_string(i), ni = "noise_" + std::to_string(i);
    (*c.clips)[ci] = synth_speech(length, derive_seed(seed, 1, i));
    (*c.clips)[ni] = synth_noise(length, derive_seed(seed, 2, i), kinds[i % 4]);
    c.manifest.records.push_back({ci, ni, snr, length, 0});
  }
  return c;
}

}  // namespace selab::data
