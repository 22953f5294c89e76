#pragma once

// Objective evaluation: SI-SDR and STOI on waveforms, and a per-utterance
// report over a manifest.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "selab/data.hpp"
#include "selab/gcrn.hpp"
#include "selab/teacher.hpp"

namespace selab::metrics {

// SI-SDR in dB with the same floor and clamp as the training loss, in
// double precision. Throws ShapeError on a length mismatch and Error for a
// silent reference.
double eval_sisdr(std::span<const float> est, std::span<const float> ref);

// STOI at 16 kHz. Frames of 410 samples (25.6 ms, half overlap) with a 1024-point
// FFT, 15 third-octave bands from 150 Hz, 30-frame (384 ms) segments,
// clipping at -15 dB SDR, and removal of frames more than 40 dB below the
// loudest clean frame. Throws Error when fewer than 30 frames remain.
struct StoiParams {
  int frame_len = 410;
  int fft_size = 1024;
  int bands = 15;
  double min_freq = 150.0;
  int segment = 30;
  double beta_db = -15.0;
  double dyn_range_db = 40.0;
  int sample_rate = 16000;
};
double eval_stoi(std::span<const float> est, std::span<const float> ref, const StoiParams& p = {});

struct EvalRow {
  std::string id;
  double sisdr_db = 0;
  double stoi = 0;
  // Scores of the unprocessed input, when requested.
  double input_sisdr_db = 0;
  double input_stoi = 0;
};

struct Aggregate {
  double mean = 0;
  double std = 0;  // population standard deviation
};

struct EvalReport {
  std::vector<EvalRow> rows;
  bool has_input = false;

  Aggregate sisdr() const;
  Aggregate stoi() const;
  Aggregate input_sisdr() const;
  Aggregate input_stoi() const;
  // Tab-separated rows with a header and "#"-prefixed aggregate footer.
  std::string to_tsv() const;
  std::string to_json() const;
};

struct EvalOptions {
  dsp::StftConfig stft;
  double peak = 0.9;
  bool include_input = true;
  // Teacher view for concat models: softmax(logits) over layers, or the last
  // layer when empty.
  std::vector<float> layer_logits;
};

// Enhances one spectrogram batch [B, 2, T, F] and returns waveforms [B, N].
Tensor<float> enhance(const model::Gcrn<float>& model, const Tensor<float>& noisy_spec,
                      const Tensor<float>& condition = {}, const dsp::StftConfig& stft = {});

// Scores the model on the static mixture of every record. A concat model
// needs `teacher`; any other model never calls it.
EvalReport evaluate(const model::Gcrn<float>& model, const data::MixManifest& manifest, const data::Loader& loader,
                    teacher::TeacherSource* teacher = nullptr, const EvalOptions& opts = {});

// Scores the unprocessed noisy input only.
EvalReport evaluate_input(const data::MixManifest& manifest, const data::Loader& loader,
                          const EvalOptions& opts = {});

}  // namespace selab::metrics
