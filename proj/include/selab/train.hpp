#pragma once

// Training loops: enhancement training in every mode, encoder and decoder
// pre-training, and fine-tuning from pre-trained parts.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "selab/data.hpp"
#include "selab/gcrn.hpp"
#include "selab/kv.hpp"
#include "selab/losses.hpp"
#include "selab/optim.hpp"
#include "selab/teacher.hpp"

namespace selab::train {

class TrainingError : public Error {
 public:
  using Error::Error;
};

enum class Mode {
  Baseline,
  Concat,
  ConcatWs,
  DistillEmbed,
  DistillEmbedWs,
  DistillOutput,
  DistillAdv,
  DistillAdvWs,
  DistillTriplet,
  DistillTripletWs,
};

inline constexpr Mode kAllModes[] = {Mode::Baseline,       Mode::Concat,         Mode::ConcatWs,
                                     Mode::DistillEmbed,   Mode::DistillEmbedWs, Mode::DistillOutput,
                                     Mode::DistillAdv,     Mode::DistillAdvWs,   Mode::DistillTriplet,
                                     Mode::DistillTripletWs};

std::string to_string(Mode m);
Mode parse_mode(const std::string& s);
bool needs_teacher(Mode m);
bool uses_layer_weights(Mode m);
bool is_concat(Mode m);
bool is_distillation(Mode m);
// Whether the trained model can run without teacher embeddings.
bool teacher_free_inference(Mode m);

struct TeacherOptions {
  // none | synthetic | file
  std::string source = "none";
  std::string dir;
  std::uint64_t seed = 0;
  int layers = 4;
  int dim = 64;
};

std::unique_ptr<teacher::TeacherSource> make_teacher(const TeacherOptions& opts, const data::MixManifest& manifest,
                                                     const dsp::StftConfig& stft);

struct StepRecord;

// Settings shared by every loop.
struct LoopOptions {
  std::int64_t steps = 1000;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  std::size_t workers = 1;
  data::MixingMode mixing = data::MixingMode::Dynamic;
  double peak = 0.9;
  // 0 writes only the final checkpoint.
  std::int64_t checkpoint_every = 0;
  // Empty: nothing is written to disk.
  std::string run_dir;
  dsp::StftConfig stft;
  // Called with every logged record.
  std::function<void(const StepRecord&)> on_step;
};

struct TrainConfig {
  Mode mode = Mode::Baseline;
  LoopOptions loop;
  losses::LossWeights weights;
  TeacherOptions teacher;

  void validate() const;
};

enum class EncoderLoss { L1, L2, Cosine };
enum class DecoderInput { Teacher, FrozenEncoder };
std::string to_string(EncoderLoss l);
std::string to_string(DecoderInput d);
EncoderLoss parse_encoder_loss(const std::string& s);
DecoderInput parse_decoder_input(const std::string& s);

struct PretrainConfig {
  LoopOptions loop = [] {
    LoopOptions l;
    l.steps = 5000;
    return l;
  }();
  TeacherOptions teacher;
  EncoderLoss encoder_loss = EncoderLoss::L1;
  DecoderInput decoder_input = DecoderInput::Teacher;
  // Required for DecoderInput::FrozenEncoder.
  std::string encoder_checkpoint;
};

// One line of the metric log: "step<TAB>key=value<TAB>...". Training
// records carry loss (total), sisdr (mean dB), aux (the unweighted
// auxiliary term, 0 without one) and grad_norm; adversarial modes add
// adv_disc. Pre-training records carry loss and grad_norm.
struct StepRecord {
  std::int64_t step = 0;
  std::vector<std::pair<std::string, double>> values;

  double get(const std::string& key) const;
  std::string line() const;
};

struct RunResult {
  std::vector<StepRecord> log;
  double seconds = 0;
  // Final softmax layer weights for the -ws modes.
  std::vector<double> layer_weights;
};

// Called after the generator update ("generator") and after the
// discriminator update ("discriminator") of every step.
using PhaseHook = std::function<void(const std::string& phase)>;

// Enhancement training in any mode. The model's conditioning is set from
// the mode; the trained model is available through model().
class Trainer {
 public:
  Trainer(TrainConfig cfg, model::GcrnConfig model_cfg, data::MixManifest manifest,
          data::Loader loader = data::wav_loader(), std::unique_ptr<teacher::TeacherSource> teacher = nullptr);
  ~Trainer();

  StepRecord step();
  RunResult run();

  model::Gcrn<float>& model() { return *model_; }
  const model::Gcrn<float>& model() const { return *model_; }
  const TrainConfig& config() const { return cfg_; }
  std::vector<Tensor<float>> generator_parameters() const;
  std::vector<Tensor<float>> discriminator_parameters() const;
  std::vector<double> layer_weights() const;
  // Auxiliary tensors ("aux." prefix) saved with the model.
  std::vector<NamedTensor> aux_state() const;
  void set_phase_hook(PhaseHook hook) { hook_ = std::move(hook); }
  std::int64_t steps_done() const { return step_; }

 private:
  struct Impl;
  TrainConfig cfg_;
  std::unique_ptr<model::Gcrn<float>> model_;
  std::unique_ptr<Impl> impl_;
  PhaseHook hook_;
  std::int64_t step_ = 0;
};

RunResult train(const TrainConfig& cfg, const model::GcrnConfig& model_cfg, const data::MixManifest& manifest,
                const data::Loader& loader = data::wav_loader());

struct PretrainResult {
  RunResult run;
  std::unique_ptr<model::Gcrn<float>> model;
  // Mean loss over the first and last min(100, steps / 10) steps.
  double initial_loss = 0;
  double final_loss = 0;
  // (initial - final) / |initial|
  double reduction() const;
};

PretrainResult pretrain_encoder(const PretrainConfig& cfg, const model::GcrnConfig& model_cfg,
                                const data::MixManifest& manifest, const data::Loader& loader = data::wav_loader(),
                                std::unique_ptr<teacher::TeacherSource> teacher = nullptr);
PretrainResult pretrain_decoder(const PretrainConfig& cfg, const model::GcrnConfig& model_cfg,
                                const data::MixManifest& manifest, const data::Loader& loader = data::wav_loader(),
                                std::unique_ptr<teacher::TeacherSource> teacher = nullptr);

// Baseline training initialized from the encoder half of one checkpoint and
// the decoder half of another. Both must match model_cfg; every mismatched
// tensor is listed in the error.
std::unique_ptr<Trainer> make_finetuner(const TrainConfig& cfg, const model::GcrnConfig& model_cfg,
                                        const std::string& encoder_ckpt, const std::string& decoder_ckpt,
                                        const data::MixManifest& manifest,
                                        const data::Loader& loader = data::wav_loader());

// Copies tensors starting with `prefix` into the model, reporting every
// missing or mismatched tensor at once.
void load_part(model::Gcrn<float>& model, const std::vector<NamedTensor>& tensors, const std::string& prefix,
               const std::string& source);

// Mean of `key` over the first and last min(window, size / 10) records (at least one).
std::pair<double, double> smoothed_endpoints(const std::vector<StepRecord>& log, const std::string& key,
                                             std::size_t window = 100);

}  // namespace selab::train
