#pragma once

// Training objectives. Waveform batches are [B, samples]; embedding
// batches are [B, frames, dim].

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "selab/checkpoint.hpp"
#include "selab/random.hpp"
#include "selab/tensor.hpp"

namespace selab::losses {

inline constexpr double kSisdrEps = 1e-8;
inline constexpr double kSisdrClampDb = 60.0;

struct LossWeights {
  double embed = 1.0;
  double adversarial = 0.1;
  double triplet = 1.0;
  double output = 1.0;
  double margin = 100.0;

  void validate() const;
};

// Scale-invariant SDR in dB per batch row, clamped to [-60, 60]. Every
// energy term is floored at 1e-8. Throws for a silent reference row or a
// shape mismatch.
template <typename T>
Tensor<T> sisdr(const Tensor<T>& est, const Tensor<T>& ref);
// Negative mean SI-SDR.
template <typename T>
Tensor<T> sisdr_loss(const Tensor<T>& est, const Tensor<T>& ref);

// Mean absolute difference; shapes must match.
template <typename T>
Tensor<T> mean_l1(const Tensor<T>& a, const Tensor<T>& b);
// Mean squared difference.
template <typename T>
Tensor<T> mean_l2(const Tensor<T>& a, const Tensor<T>& b);
// Mean over rows of 1 - cosine similarity along the last axis.
template <typename T>
Tensor<T> cosine_distance(const Tensor<T>& a, const Tensor<T>& b);

// Affine map over the last axis.
template <typename T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  std::vector<Tensor<T>> parameters() const { return {weight, bias}; }
};

// Mean L1 between the projected bottleneck and the teacher embeddings.
template <typename T>
Tensor<T> distill_embed(const Tensor<T>& bottleneck, const Tensor<T>& teacher, const Linear<T>& proj);

// Scores each frame of an embedding sequence: three convolutions along the
// frame axis (kernel 3; the second has stride 2) with leaky ReLU in between.
template <typename T>
class Discriminator {
 public:
  Discriminator(std::int64_t dim, Rng& rng, std::int64_t width = 32);
  // [B, frames, dim] -> [B, ceil(frames / 2)]
  Tensor<T> operator()(const Tensor<T>& x) const;
  std::vector<Tensor<T>> parameters() const;
  std::vector<NamedTensor> state_dict(const std::string& prefix) const;

 private:
  std::vector<Tensor<T>> weights_, biases_;
};

template <typename T>
struct AdversarialLoss {
  Tensor<T> generator;      // mean (D(fake) - 1)^2
  Tensor<T> discriminator;  // 0.5 mean D(fake)^2 + 0.5 mean (D(real) - 1)^2
};

// The discriminator term sees `fake` detached, so generator parameters
// receive gradient only from the generator term. `real` is used as given.
template <typename T>
AdversarialLoss<T> adversarial(const Tensor<T>& fake, const Tensor<T>& real, const Discriminator<T>& disc);

// Per-frame hinge max(|a - p| - |a - n| + margin, 0) averaged over frames.
template <typename T>
Tensor<T> triplet(const Tensor<T>& anchor, const Tensor<T>& positive, const Tensor<T>& negative,
                  double margin = 100.0);

// Maps a waveform batch to embeddings [B, frames, dim].
template <typename T>
struct EmbeddingFn {
  std::function<Tensor<T>(const Tensor<T>&)> fn;
  bool differentiable = false;
  std::string name = "teacher";
};

// Mean L1 between teacher(est) and teacher(ref). The reference side is
// computed without gradient. Throws ConfigError for a non-differentiable teacher.
template <typename T>
Tensor<T> distill_output(const Tensor<T>& est, const Tensor<T>& ref, const EmbeddingFn<T>& teacher);

}  // namespace selab::losses
