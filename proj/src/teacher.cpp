#include "selab/teacher.hpp"

#include <cmath>
#include <filesystem>

#include "binary_io.hpp"
#include "selab/ops.hpp"
#include "selab/random.hpp"

namespace selab::teacher {

using namespace selab::ops;

// ---- EmbeddingSequence ----------------------------------------------------------

Tensor<float> EmbeddingSequence::tensor() const { return Tensor<float>::from({layers, frames, dim}, data); }

Tensor<float> EmbeddingSequence::layer(std::int64_t l) const {
  if (l < 0 || l >= layers)
    throw ShapeError("embeddings: layer " + std::to_string(l) + " out of range [0, " + std::to_string(layers) + ")");
  auto first = data.begin() + l * frames * dim;
  return Tensor<float>::from({frames, dim}, std::vector<float>(first, first + frames * dim));
}

EmbeddingSequence EmbeddingSequence::truncated(std::int64_t n) const {
  if (n < 0 || n > frames)
    throw ShapeError("embeddings: cannot truncate " + std::to_string(frames) + " frames to " + std::to_string(n));
  EmbeddingSequence e = *this;
  e.frames = n;
  e.data.clear();
  for (std::int64_t l = 0; l < layers; ++l) {
    auto first = data.begin() + l * frames * dim;
    e.data.insert(e.data.end(), first, first + n * dim);
  }
  return e;
}

void EmbeddingSequence::validate(const std::string& what) const {
  if (layers < 1 || frames < 1 || dim < 1)
    throw SebError(SebError::Kind::BadHeader, what + ": layers, frames and dim must be positive (got " +
                                                  std::to_string(layers) + ", " + std::to_string(frames) + ", " +
                                                  std::to_string(dim) + ")");
  if (hop_samples == 0 || sample_rate == 0)
    throw SebError(SebError::Kind::BadHeader, what + ": hop_samples and sample_rate must be positive");
  if (static_cast<std::int64_t>(data.size()) != layers * frames * dim)
    throw SebError(SebError::Kind::BadHeader, what + ": payload has " + std::to_string(data.size()) +
                                                  " values, header implies " +
                                                  std::to_string(layers * frames * dim));
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!std::isfinite(data[i]))
      throw SebError(SebError::Kind::NonFinite, what + ": non-finite value at index " + std::to_string(i));
}

std::string encode_seb(const EmbeddingSequence& e) {
  e.validate();
  std::string out = "SEB1";
  binary::put_u32(out, kSebVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(e.layers));
  binary::put_u32(out, static_cast<std::uint32_t>(e.frames));
  binary::put_u32(out, static_cast<std::uint32_t>(e.dim));
  binary::put_u32(out, e.hop_samples);
  binary::put_u32(out, e.sample_rate);
  out.reserve(out.size() + e.data.size() * 4);
  for (float v : e.data) binary::put_f32(out, v);
  return out;
}

EmbeddingSequence decode_seb(const std::string& bytes, const std::string& what) {
  constexpr std::size_t header = 4 + 6 * 4;
  if (bytes.size() < 4 || bytes.compare(0, 4, "SEB1") != 0)
    throw SebError(SebError::Kind::BadMagic, what + ": bad magic (expected SEB1)");
  if (bytes.size() < header)
    throw SebError(SebError::Kind::Truncated, what + ": truncated header: expected " + std::to_string(header) +
                                                  " bytes, file has " + std::to_string(bytes.size()));
  binary::Reader r(bytes, what);
  r.skip(4, "magic");
  const auto version = r.u32("version");
  if (version != kSebVersion)
    throw SebError(SebError::Kind::BadVersion,
                   what + ": unsupported version " + std::to_string(version) + " (expected 1)");
  EmbeddingSequence e;
  e.layers = r.u32("layers");
  e.frames = r.u32("frames");
  e.dim = r.u32("dim");
  e.hop_samples = r.u32("hop_samples");
  e.sample_rate = r.u32("sample_rate");
  if (e.layers < 1 || e.frames < 1 || e.dim < 1 || e.hop_samples == 0 || e.sample_rate == 0)
    throw SebError(SebError::Kind::BadHeader, what + ": header has a zero field (layers " +
                                                  std::to_string(e.layers) + ", frames " +
                                                  std::to_string(e.frames) + ", dim " + std::to_string(e.dim) +
                                                  ", hop " + std::to_string(e.hop_samples) + ", rate " +
                                                  std::to_string(e.sample_rate) + ")");
  const std::uint64_t count = std::uint64_t(e.layers) * std::uint64_t(e.frames) * std::uint64_t(e.dim);
  const std::uint64_t expected = header + 4 * count;
  if (bytes.size() < expected)
    throw SebError(SebError::Kind::Truncated, what + ": truncated payload: expected " + std::to_string(expected) +
                                                  " bytes, file has " + std::to_string(bytes.size()));
  if (bytes.size() > expected)
    throw SebError(SebError::Kind::TrailingBytes, what + ": " + std::to_string(bytes.size() - expected) +
                                                      " unexpected trailing bytes after payload");
  e.data.resize(count);
  r.f32_array(e.data.data(), count, "payload");
  e.validate(what);
  return e;
}

void save_embeddings(const std::string& path, const EmbeddingSequence& e) {
  binary::write_file(path, encode_seb(e));
}

EmbeddingSequence load_embeddings(const std::string& path) { return decode_seb(binary::read_file(path), path); }

std::int64_t aligned_frames(const EmbeddingSequence& e, std::int64_t spec_frames, const dsp::StftConfig& stft,
                            int sample_rate) {
  if (static_cast<int>(e.hop_samples) != stft.hop || static_cast<int>(e.sample_rate) != sample_rate)
    throw FormatError("embeddings: grid hop " + std::to_string(e.hop_samples) + " at " +
                      std::to_string(e.sample_rate) + " Hz does not match STFT hop " + std::to_string(stft.hop) +
                      " at " + std::to_string(sample_rate) + " Hz");
  if (std::abs(e.frames - spec_frames) > 1)
    throw ShapeError("embeddings: " + std::to_string(e.frames) + " frames cannot be aligned to " +
                     std::to_string(spec_frames) + " spectrogram frames");
  return std::min(e.frames, spec_frames);
}

// ---- layer views ------------------------------------------------------------------

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& layers, const Tensor<T>& logits) {
  if (layers.rank() < 1 || logits.rank() != 1 || logits.dim(0) != layers.dim(0))
    throw ShapeError("weighted_sum: " + to_string(logits.shape()) + " logits for layers " +
                     to_string(layers.shape()));
  const std::int64_t L = layers.dim(0), rest = layers.numel() / L;
  Shape out_shape(layers.shape().begin() + 1, layers.shape().end());
  auto w = reshape(softmax(logits), {1, L});
  return reshape(matmul(w, reshape(layers, {L, rest})), out_shape);
}

template <typename T>
Tensor<T> last_layer(const Tensor<T>& layers) {
  if (layers.rank() < 1 || layers.dim(0) < 1) throw ShapeError("last_layer: empty layer axis");
  Shape out_shape(layers.shape().begin() + 1, layers.shape().end());
  const std::int64_t L = layers.dim(0);
  return reshape(slice(layers, 0, L - 1, L), out_shape);
}

std::vector<double> LayerWeights::weights() const {
  std::vector<double> w(logits.numel());
  double mx = -1e300, s = 0;
  for (auto v : logits.data()) mx = std::max(mx, double(v));
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] = std::exp(double(logits.at(i)) - mx));
  for (auto& v : w) v /= s;
  return w;
}

// ---- synthetic teacher --------------------------------------------------------------

SyntheticTeacher::SyntheticTeacher(std::uint64_t seed, int layers, int dim, int bins)
    : seed_(seed), layers_(layers), dim_(dim), bins_(bins) {
  if (layers < 1 || dim < 1 || bins < 1)
    throw ConfigError("teacher: synthetic teacher needs positive layers, dim and bins");
  Rng rng(derive_seed(seed, 0x7465616368));
  for (int l = 0; l < layers; ++l) {
    const int in = l ? dim : bins;
    const double scale = 1.0 / std::sqrt(3.0 * in);
    std::vector<double> w(static_cast<std::size_t>(dim) * in * 3), b(dim);
    for (auto& v : w) v = rng.normal(0.0, scale);
    for (auto& v : b) v = rng.normal(0.0, 0.1);
    weights_.push_back(std::move(w));
    biases_.push_back(std::move(b));
  }
}

template <typename T>
Tensor<T> SyntheticTeacher::embed(const Tensor<T>& spec) const {
  if (spec.rank() != 4 || spec.dim(1) != 2 || spec.dim(3) != bins_)
    throw ShapeError("synthetic teacher: expected [B, 2, frames, " + std::to_string(bins_) + "], got " +
                     to_string(spec.shape()));
  const std::int64_t B = spec.dim(0), frames = spec.dim(2);
  auto mag = sqrt(add(square(slice(spec, 1, 0, 1)), square(slice(spec, 1, 1, 2))), T(1e-8));
  // [B, 1, T, F] -> [B, F, T, 1]: frequency bins become input channels.
  Tensor<T> x = permute(log(mag, T(1)), {0, 3, 2, 1});
  Conv2dGeometry g;
  g.pad_t_front = 1;
  g.pad_t_back = 1;
  std::vector<Tensor<T>> outs;
  for (int l = 0; l < layers_; ++l) {
    const std::int64_t in = l ? dim_ : bins_;
    auto w = Tensor<T>::from({dim_, in, 3, 1}, std::vector<T>(weights_[l].begin(), weights_[l].end()));
    auto b = Tensor<T>::from({dim_}, std::vector<T>(biases_[l].begin(), biases_[l].end()));
    x = tanh(conv2d(x, w, b, g));
    outs.push_back(reshape(permute(x, {0, 2, 1, 3}), {1, B, frames, dim_}));
  }
  return concat(outs, 0);
}

EmbeddingSequence SyntheticTeacher::embed(const dsp::Waveform& w, const dsp::StftConfig& stft) const {
  NoGradGuard no_grad;
  auto spec = dsp::to_tensor(dsp::stft(w, stft));
  auto y = embed(spec);
  EmbeddingSequence e;
  e.layers = layers_;
  e.frames = y.dim(2);
  e.dim = dim_;
  e.hop_samples = static_cast<std::uint32_t>(stft.hop);
  e.sample_rate = static_cast<std::uint32_t>(w.sample_rate);
  e.data.assign(y.data().begin(), y.data().end());
  return e;
}

template Tensor<float> weighted_sum(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> weighted_sum(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> last_layer(const Tensor<float>&);
template Tensor<double> last_layer(const Tensor<double>&);
template Tensor<float> SyntheticTeacher::embed(const Tensor<float>&) const;
template Tensor<double> SyntheticTeacher::embed(const Tensor<double>&) const;

// ---- sources ----------------------------------------------------------------------------

Tensor<float> TeacherSource::embed_spec(const Tensor<float>&) {
  throw ConfigError("teacher: source " + name() +
                    " is not differentiable; output distillation needs gradients through the teacher "
                    "(use teacher.source = synthetic)");
}

Tensor<float> SyntheticSource::clean(const data::Batch& batch) {
  NoGradGuard no_grad;
  return teacher_.embed(batch.clean_spec);
}

Tensor<float> SyntheticSource::noisy(const data::Batch& batch) {
  NoGradGuard no_grad;
  return teacher_.embed(batch.noisy_spec);
}

Tensor<float> SyntheticSource::embed_spec(const Tensor<float>& spec) { return teacher_.embed(spec); }

FileSource::FileSource(std::string dir, data::MixManifest manifest, dsp::StftConfig stft)
    : dir_(std::move(dir)), manifest_(std::move(manifest)), stft_(stft) {
  if (manifest_.records.empty()) throw ConfigError("teacher.dir: manifest has no records");
  for (std::size_t i = 0; i < manifest_.records.size(); ++i)
    for (bool noisy : {false, true}) {
      const auto p = path_for(i, noisy);
      if (!std::filesystem::exists(p)) throw IoError("teacher.dir: missing embedding file " + p);
    }
  const auto& first = get(path_for(0, false));
  layers_ = first.layers;
  dim_ = first.dim;
}

std::string FileSource::path_for(std::size_t record, bool noisy) const {
  const auto stem = data::record_stem(record, manifest_.records.at(record));
  return (std::filesystem::path(dir_) / (stem + (noisy ? ".noisy.seb" : ".seb"))).string();
}

const EmbeddingSequence& FileSource::get(const std::string& path) {
  auto it = cache_.find(path);
  if (it == cache_.end()) it = cache_.emplace(path, load_embeddings(path)).first;
  return it->second;
}

Tensor<float> FileSource::gather(const data::Batch& batch, const std::string& suffix) {
  const std::int64_t B = static_cast<std::int64_t>(batch.record_index.size());
  const std::int64_t spec_frames = batch.noisy_spec.dim(2);
  std::vector<const EmbeddingSequence*> seqs;
  std::int64_t common = spec_frames;
  for (auto idx : batch.record_index) {
    const auto& e = get(path_for(idx, suffix == ".noisy"));
    if (e.layers != layers_ || e.dim != dim_)
      throw FormatError("teacher: " + path_for(idx, suffix == ".noisy") + " has " + std::to_string(e.layers) +
                        "x" + std::to_string(e.dim) + " embeddings, expected " + std::to_string(layers_) + "x" +
                        std::to_string(dim_));
    common = std::min(common, aligned_frames(e, spec_frames, stft_));
    seqs.push_back(&e);
  }
  std::vector<float> out(layers_ * B * common * dim_);
  for (std::int64_t l = 0; l < layers_; ++l)
    for (std::int64_t b = 0; b < B; ++b) {
      const auto& e = *seqs[b];
      const float* src = e.data.data() + l * e.frames * dim_;
      std::copy_n(src, common * dim_, out.data() + ((l * B + b) * common) * dim_);
    }
  return Tensor<float>::from({layers_, B, common, dim_}, std::move(out));
}

}  // namespace selab::teacher
