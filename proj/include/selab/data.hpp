#pragma once

// Noisy/clean pair construction and deterministic batch iteration.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "selab/dsp.hpp"
#include "selab/random.hpp"
#include "selab/tensor.hpp"

namespace selab::data {

using dsp::Waveform;

// Either a fixed SNR (lo == hi) or a uniform range [lo, hi] in dB.
struct SnrSpec {
  double lo = 0;
  double hi = 0;

  static SnrSpec fixed(double db) { return {db, db}; }
  static SnrSpec range(double lo, double hi);
  // "x" or "lo:hi"
  static SnrSpec parse(const std::string& text);

  bool is_fixed() const { return lo == hi; }
  double draw(Rng& rng) const;
  std::string str() const;
  bool operator==(const SnrSpec&) const = default;
};

struct MixRecord {
  std::string clean_path;
  std::string noise_path;
  SnrSpec snr;
  std::int64_t crop_len = 16000;
  // 0 means "derive from the iterator seed and the record index".
  std::uint64_t seed = 0;
  bool operator==(const MixRecord&) const = default;
};

struct MixManifest {
  std::vector<MixRecord> records;
};

// One record per line: clean<TAB>noise<TAB>snr[<TAB>crop_len[<TAB>seed]].
// Blank lines and lines starting with '#' are ignored. Relative paths are
// resolved against `base_dir` when it is non-empty.
MixManifest parse_manifest(const std::string& text, const std::string& base_dir = "",
                           std::int64_t default_crop = 16000);
MixManifest load_manifest(const std::string& path, std::int64_t default_crop = 16000);
std::string format_manifest(const MixManifest& m);

// File stem used for every artifact derived from record `index`.
std::string record_stem(std::size_t index, const MixRecord& r);

struct Mixture {
  Waveform noisy;
  Waveform clean;
  double noise_gain = 0;
  double snr_db = 0;
};

// Scales noise so that 10*log10(|clean|^2 / |g*noise|^2) == snr_db and adds it.
// Noise is tiled or cropped from offset 0 to the clean length.
Mixture mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db);

// Scales so that max |x| == peak; silent input is returned unchanged.
void peak_normalize(Waveform& w, double peak = 0.9);

// Tiles a short signal, or crops a long one at a random offset (offset 0
// when rng is null).
Waveform fit_length(const Waveform& w, std::int64_t n, Rng* rng);

// Clip loader used by the iterator. The default reads 16 kHz WAV files and
// caches them.
using Loader = std::function<Waveform(const std::string&)>;
Loader wav_loader();
Loader memory_loader(std::shared_ptr<const std::map<std::string, Waveform>> clips);

enum class MixingMode {
  // Random crop offset and SNR redrawn every epoch.
  Dynamic,
  // Offset-0 crop and one SNR per record, identical to `se-lab mix` output.
  Static,
};

struct IteratorOptions {
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool shuffle = true;
  bool drop_last = false;
  MixingMode mixing = MixingMode::Dynamic;
  double peak = 0.9;
  dsp::StftConfig stft;
};

struct Batch {
  Tensor<float> noisy_spec;  // [B, 2, T, F]
  Tensor<float> clean_spec;
  Tensor<float> noisy_wave;  // [B, N]
  Tensor<float> clean_wave;
  std::vector<std::size_t> record_index;
  std::vector<double> snr_db;
  std::int64_t epoch = 0;
};

// Builds one item exactly as the iterator would.
Mixture make_item(const MixRecord& r, std::size_t index, std::int64_t epoch,
                  const IteratorOptions& opts, const Loader& load);

// Deterministic batch stream over a manifest. Emission order and contents
// depend only on the seed, never on the worker count.
class MixIterator {
 public:
  MixIterator(MixManifest manifest, IteratorOptions opts, Loader load = wav_loader());

  // Next batch of the current epoch, or nullopt at the end of the epoch.
  std::optional<Batch> next();
  // Cycles through epochs indefinitely.
  Batch next_cycling();
  void start_epoch(std::int64_t epoch);

  std::int64_t epoch() const { return epoch_; }
  std::size_t size() const { return manifest_.records.size(); }
  const MixManifest& manifest() const { return manifest_; }
  const IteratorOptions& options() const { return opts_; }

 private:
  MixManifest manifest_;
  IteratorOptions opts_;
  Loader load_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t epoch_ = 0;
};

// Stacks equal-length waveforms into [B, N] and their spectrograms into [B, 2, T, F].
Tensor<float> stack_waves(const std::vector<const Waveform*>& waves);
Tensor<float> stack_specs(const std::vector<const Waveform*>& waves, const dsp::StftConfig& cfg);

// ---- synthetic audio ----------------------------------------------------------

// Speech-like test material: voiced syllables with a drifting pitch and
// formant resonances, short fricative bursts and pauses.
Waveform synth_speech(std::int64_t n, std::uint64_t seed, int sample_rate = 16000);

enum class NoiseKind { White, Pink, Babble, Hum };
Waveform synth_noise(std::int64_t n, std::uint64_t seed, NoiseKind kind = NoiseKind::Pink,
                     int sample_rate = 16000);

// In-memory corpus of `count` clean/noise pairs under names "clean_<i>" and
// "noise_<i>", plus the matching manifest.
struct SyntheticCorpus {
  std::shared_ptr<std::map<std::string, Waveform>> clips;
  MixManifest manifest;
};
SyntheticCorpus synthetic_corpus(std::size_t count, std::int64_t length, SnrSpec snr,
                                 std::uint64_t seed);

}  // namespace selab::data
