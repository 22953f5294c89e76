#pragma once

// Causal gated convolutional recurrent network for complex spectral mapping.
//
// Input and output are spectrograms laid out [batch, 2 (re, im), frames, bins].
// The encoder is a stack of gated conv blocks (time stride 1, frequency
// stride per block) followed by the first half of the grouped LSTM layers;
// the decoder holds the second half, a linear map back to the deepest conv
// shape and gated transposed convs fed with additive skips.

#include <cstdint>
#include <string>
#include <vector>

#include "selab/checkpoint.hpp"
#include "selab/kv.hpp"
#include "selab/tensor.hpp"

namespace selab::model {

enum class Conditioning { None, Concat };

std::string to_string(Conditioning c);
Conditioning parse_conditioning(const std::string& s);

struct GcrnConfig {
  std::vector<std::int64_t> channels{16, 32, 64, 128, 256};
  std::vector<std::int64_t> freq_strides{2, 2, 2, 2, 2};
  int kernel_time = 2;
  int kernel_freq = 3;
  // Total hidden size summed over groups; also the bottleneck width.
  std::int64_t lstm_hidden = 256;
  // Split evenly between encoder and decoder.
  int lstm_layers = 2;
  int lstm_groups = 2;
  Conditioning conditioning = Conditioning::None;
  std::int64_t condition_dim = 64;
  std::int64_t input_bins = 257;

  static GcrnConfig default_preset() { return {}; }
  // Small model for smoke training runs.
  static GcrnConfig tiny_preset();

  // Frequency size after each encoder block, starting with input_bins.
  std::vector<std::int64_t> freq_sizes() const;
  std::int64_t bottleneck_dim() const { return lstm_hidden; }
  // Flattened width of the deepest conv block output.
  std::int64_t conv_features() const;
  void validate() const;

  // Every field under "<prefix>" as `key = value` lines.
  KeyValues to_kv(const std::string& prefix = "model.") const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static GcrnConfig from_kv(const KeyValues& kv, const std::string& prefix = "model.");
  std::string serialize() const { return to_kv().str(); }
  static GcrnConfig parse(const std::string& text);

  bool operator==(const GcrnConfig&) const = default;
};

// Parameters of one grouped LSTM layer: each group owns an input matrix
// [4h, in/G], a recurrent matrix [4h, h] and a bias [4h] with h = H/G.
std::int64_t grouped_lstm_params(std::int64_t input, std::int64_t hidden, int groups);

template <typename T>
struct Encoded {
  Tensor<T> features;            // [B, frames, bottleneck]
  std::vector<Tensor<T>> skips;  // conv block outputs, shallowest first
};

template <typename T>
struct LstmState {
  Tensor<T> h;  // [B, hidden]
  Tensor<T> c;
};

// Recurrence of one LSTM over a precomputed input projection
// xproj [B, frames, 4h] (gate order i, f, g, o) with recurrent weights
// w_hh [4h, h]. Returns hidden states [B, frames, h]. `state`, if given,
// supplies the initial state and receives the final one (not differentiated).
template <typename T>
Tensor<T> lstm_scan(const Tensor<T>& xproj, const Tensor<T>& w_hh, LstmState<T>* state = nullptr);

// Per-stream inference state. Created by Gcrn::make_stream(); owned by one stream.
template <typename T>
struct StreamState {
  std::vector<Tensor<T>> encoder_history;  // [B, C_in, kernel_time - 1, F] per block
  std::vector<Tensor<T>> decoder_history;
  std::vector<LstmState<T>> lstm;          // per layer and group
  std::int64_t frames = 0;
  bool started = false;
  bool finished = false;

  // Marks the stream ended; further pushes throw.
  void finish() { finished = true; }
};

template <typename T>
class Gcrn {
 public:
  explicit Gcrn(GcrnConfig config, std::uint64_t seed = 0);

  const GcrnConfig& config() const { return config_; }

  // spec [B, 2, frames, bins] -> features [B, frames, bottleneck] plus skips.
  Encoded<T> encode(const Tensor<T>& spec) const;
  // With empty skips the decoder runs in teacher-input mode: each skip is
  // replaced by the previous stage input duplicated twice along frequency
  // and channel-averaged to the skip's shape. `condition` [B, frames, D]
  // is required exactly when conditioning is concat.
  Tensor<T> decode(const Tensor<T>& features, const std::vector<Tensor<T>>& skips,
                   const Tensor<T>& condition = {}) const;
  // Full model. A condition one frame longer or shorter than the input is
  // trimmed together with the input to the common length.
  Tensor<T> forward(const Tensor<T>& spec, const Tensor<T>& condition = {}) const;

  StreamState<T> make_stream() const;
  // frame [B, 2, 1, bins] -> [B, 2, 1, bins]; condition [B, 1, D] when concat.
  Tensor<T> forward_stream(StreamState<T>& state, const Tensor<T>& frame,
                           const Tensor<T>& condition = {}) const;

  const std::vector<std::pair<std::string, Tensor<T>>>& named_parameters() const { return params_; }
  std::vector<Tensor<T>> parameters() const;
  std::vector<Tensor<T>> encoder_parameters() const;
  std::vector<Tensor<T>> decoder_parameters() const;
  std::int64_t param_count() const;

  std::vector<NamedTensor> state_dict() const;
  // Every model tensor must be present with a matching shape. Tensors whose
  // names start with "aux." are ignored; any other unknown name is an error.
  void load_state_dict(const std::vector<NamedTensor>& tensors);
  // Copies the named subset (e.g. encoder only) and leaves the rest.
  void load_matching(const std::vector<NamedTensor>& tensors, const std::string& prefix);

 private:
  struct Block {
    Tensor<T> weight;
    Tensor<T> bias;
  };
  struct LstmGroup {
    Tensor<T> w_ih;
    Tensor<T> w_hh;
    Tensor<T> bias;
  };

  Tensor<T>& add_param(const std::string& name, Tensor<T> t);
  Tensor<T> run_lstm(const Tensor<T>& x, int layer, StreamState<T>* stream) const;
  Tensor<T> shuffle(const Tensor<T>& x) const;
  Tensor<T> encode_convs(const Tensor<T>& spec, std::vector<Tensor<T>>& skips,
                         StreamState<T>* stream) const;
  Tensor<T> decode_impl(const Tensor<T>& features, const std::vector<Tensor<T>>& skips,
                        const Tensor<T>& condition, StreamState<T>* stream) const;

  GcrnConfig config_;
  std::vector<std::int64_t> freqs_;
  std::vector<Block> enc_;
  std::vector<Block> dec_;  // deepest first; the last is the output layer
  std::vector<std::vector<LstmGroup>> lstm_;
  Tensor<T> bridge_w_, bridge_b_;
  Tensor<T> cond_w_, cond_b_;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
};

// Writes `<path>` (GCK1) and `<path>.cfg` (the config document). `extra`
// tensors are appended as-is and should carry the "aux." prefix.
void save_model(const std::string& path, const Gcrn<float>& model,
                const std::vector<NamedTensor>& extra = {});
GcrnConfig load_model_config(const std::string& path);
Gcrn<float> load_model(const std::string& path);

extern template class Gcrn<float>;
extern template class Gcrn<double>;

}  // namespace selab::model
