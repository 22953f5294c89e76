#pragma once

// Teacher embedding sequences: SEB1 files, layer views and a frozen
// synthetic teacher that stands in for a pretrained speech model.
//
// SEB1 layout (little-endian):
//   "SEB1" | u32 version = 1 | u32 layers | u32 frames | u32 dim |
//   u32 hop_samples | u32 sample_rate | float32 data[layers][frames][dim]

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "selab/data.hpp"
#include "selab/dsp.hpp"
#include "selab/error.hpp"
#include "selab/tensor.hpp"

namespace selab::teacher {

inline constexpr std::uint32_t kSebVersion = 1;

class SebError : public FormatError {
 public:
  enum class Kind { BadMagic, BadVersion, BadHeader, Truncated, TrailingBytes, NonFinite };
  SebError(Kind kind, const std::string& msg) : FormatError(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct EmbeddingSequence {
  std::int64_t layers = 0;
  std::int64_t frames = 0;
  std::int64_t dim = 0;
  std::uint32_t hop_samples = 320;
  std::uint32_t sample_rate = 16000;
  std::vector<float> data;  // [layers][frames][dim]

  float at(std::int64_t l, std::int64_t t, std::int64_t d) const {
    return data[(l * frames + t) * dim + d];
  }
  // [layers, frames, dim]
  Tensor<float> tensor() const;
  // [frames, dim] view of one layer.
  Tensor<float> layer(std::int64_t l) const;
  // Keeps the first `n` frames.
  EmbeddingSequence truncated(std::int64_t n) const;
  // Shape consistency and finite payload.
  void validate(const std::string& what = "embeddings") const;

  bool operator==(const EmbeddingSequence&) const = default;
};

std::string encode_seb(const EmbeddingSequence& e);
EmbeddingSequence decode_seb(const std::string& bytes, const std::string& what = "SEB1");
void save_embeddings(const std::string& path, const EmbeddingSequence& e);
EmbeddingSequence load_embeddings(const std::string& path);

// Checks that the embedding grid matches the STFT hop and sample rate and
// that the frame counts differ by at most one. Returns the common length.
std::int64_t aligned_frames(const EmbeddingSequence& e, std::int64_t spec_frames,
                            const dsp::StftConfig& stft, int sample_rate = 16000);

// Convex combination over the leading (layer) axis of `layers` [L, ...]
// with weights softmax(logits); differentiable in both arguments.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& layers, const Tensor<T>& logits);
// layers[L - 1]
template <typename T>
Tensor<T> last_layer(const Tensor<T>& layers);

// Learnable layer weights, initialized uniform.
struct LayerWeights {
  Tensor<float> logits;

  explicit LayerWeights(std::int64_t layers) : logits(Tensor<float>::zeros({layers}, true)) {}
  std::vector<double> weights() const;
};

// Frozen random network over log(1 + |X|): a stack of time convolutions
// (kernel 3) with tanh, one output layer per conv. Never trained.
class SyntheticTeacher {
 public:
  explicit SyntheticTeacher(std::uint64_t seed = 0, int layers = 4, int dim = 64, int bins = 257);

  int layers() const { return layers_; }
  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  // spec [B, 2, frames, bins] -> [layers, B, frames, dim], differentiable in spec.
  template <typename T>
  Tensor<T> embed(const Tensor<T>& spec) const;
  EmbeddingSequence embed(const dsp::Waveform& w, const dsp::StftConfig& stft = {}) const;

 private:
  std::uint64_t seed_;
  int layers_, dim_, bins_;
  std::vector<std::vector<double>> weights_;  // [out, in, 3] per layer
  std::vector<std::vector<double>> biases_;
};

// Where training gets embeddings from. Batched results are laid out
// [layers, B, frames, dim].
class TeacherSource {
 public:
  virtual ~TeacherSource() = default;
  virtual std::string name() const = 0;
  virtual std::int64_t layers() const = 0;
  virtual std::int64_t dim() const = 0;
  virtual Tensor<float> clean(const data::Batch& batch) = 0;
  virtual Tensor<float> noisy(const data::Batch& batch) = 0;
  virtual bool differentiable() const { return false; }
  // Embeds estimated spectrograms [B, 2, frames, bins] keeping the graph.
  virtual Tensor<float> embed_spec(const Tensor<float>& spec);
};

class SyntheticSource : public TeacherSource {
 public:
  explicit SyntheticSource(SyntheticTeacher teacher) : teacher_(std::move(teacher)) {}
  std::string name() const override { return "synthetic"; }
  std::int64_t layers() const override { return teacher_.layers(); }
  std::int64_t dim() const override { return teacher_.dim(); }
  Tensor<float> clean(const data::Batch& batch) override;
  Tensor<float> noisy(const data::Batch& batch) override;
  bool differentiable() const override { return true; }
  Tensor<float> embed_spec(const Tensor<float>& spec) override;

 private:
  SyntheticTeacher teacher_;
};

// Reads `<dir>/<stem>.seb` (clean) and `<dir>/<stem>.noisy.seb` for each
// record, where stem is data::record_stem. Files are cached after first use.
class FileSource : public TeacherSource {
 public:
  FileSource(std::string dir, data::MixManifest manifest, dsp::StftConfig stft = {});
  std::string name() const override { return "file:" + dir_; }
  std::int64_t layers() const override { return layers_; }
  std::int64_t dim() const override { return dim_; }
  Tensor<float> clean(const data::Batch& batch) override { return gather(batch, ""); }
  Tensor<float> noisy(const data::Batch& batch) override { return gather(batch, ".noisy"); }

  std::string path_for(std::size_t record, bool noisy) const;

 private:
  Tensor<float> gather(const data::Batch& batch, const std::string& suffix);
  const EmbeddingSequence& get(const std::string& path);

  std::string dir_;
  data::MixManifest manifest_;
  dsp::StftConfig stft_;
  std::int64_t layers_ = 0, dim_ = 0;
  std::map<std::string, EmbeddingSequence> cache_;
};

extern template Tensor<float> weighted_sum(const Tensor<float>&, const Tensor<float>&);
extern template Tensor<double> weighted_sum(const Tensor<double>&, const Tensor<double>&);
extern template Tensor<float> last_layer(const Tensor<float>&);
extern template Tensor<double> last_layer(const Tensor<double>&);
extern template Tensor<float> SyntheticTeacher::embed(const Tensor<float>&) const;
extern template Tensor<double> SyntheticTeacher::embed(const Tensor<double>&) const;

}  // namespace selab::teacher
