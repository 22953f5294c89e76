#pragma once

// Mono RIFF/WAVE reading and writing. No resampling: files at any other rate
// than the required one are rejected.

#include <string>

#include "selab/dsp.hpp"

namespace selab::dsp {

enum class WavFormat { Pcm16, Float32 };

std::string encode_wav(const Waveform& w, WavFormat format = WavFormat::Float32);
// `what` names the source in error messages.
Waveform decode_wav(const std::string& bytes, const std::string& what = "wav",
                    int required_rate = 16000);

Waveform read_wav(const std::string& path, int required_rate = 16000);
void write_wav(const std::string& path, const Waveform& w,
               WavFormat format = WavFormat::Float32);

}  // namespace selab::dsp
