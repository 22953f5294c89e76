#pragma once

// The run configuration document: every setting a command reads, grouped
// in dotted sections. After loading, every field is explicit, so str()
// reproduces the run.

#include <string>
#include <utility>
#include <vector>

#include "selab/data.hpp"
#include "selab/dsp.hpp"
#include "selab/gcrn.hpp"
#include "selab/kv.hpp"
#include "selab/losses.hpp"
#include "selab/train.hpp"

namespace selab {

struct DataOptions {
  std::string manifest;
  std::int64_t crop_len = 16000;
  data::MixingMode mixing = data::MixingMode::Dynamic;
  double peak = 0.9;
};

struct TrainOptions {
  train::Mode mode = train::Mode::Baseline;
  std::int64_t steps = 1000;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  std::size_t workers = 1;
  std::int64_t checkpoint_every = 0;
  std::string run_dir;
};

struct PretrainOptions {
  std::int64_t steps = 5000;
  train::EncoderLoss loss = train::EncoderLoss::L1;
  train::DecoderInput input = train::DecoderInput::Teacher;
  std::string encoder_checkpoint;
};

struct FinetuneOptions {
  std::string encoder_checkpoint;
  std::string decoder_checkpoint;
};

struct EvalSettings {
  std::string checkpoint;
  // Empty: the TSV goes to stdout.
  std::string report;
  std::string json;
  bool include_input = true;
};

struct RunConfig {
  dsp::StftConfig stft;
  model::GcrnConfig model;
  DataOptions data;
  TrainOptions train;
  losses::LossWeights losses;
  train::TeacherOptions teacher;
  PretrainOptions pretrain;
  FinetuneOptions finetune;
  EvalSettings eval;

  // Sections: stft, model, data, train, losses, teacher, pretrain, finetune,
  // eval. Unknown sections or keys and malformed values throw ConfigError
  // naming the key.
  static RunConfig from_kv(const KeyValues& kv);
  static RunConfig parse(const std::string& text);
  // Reads `path` (when non-empty), then applies `overrides` in order.
  static RunConfig load(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides);

  KeyValues to_kv() const;
  std::string str() const;
  void validate() const;

  train::LoopOptions loop_options(std::int64_t steps) const;
  train::TrainConfig train_config() const;
  train::PretrainConfig pretrain_config() const;
};

std::string to_string(dsp::WindowType w);
std::string to_string(dsp::SynthesisType s);
std::string to_string(data::MixingMode m);
dsp::WindowType parse_window(const std::string& s);
dsp::SynthesisType parse_synthesis(const std::string& s);
data::MixingMode parse_mixing(const std::string& s);

}  // namespace selab
