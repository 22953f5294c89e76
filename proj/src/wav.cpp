#include "selab/wav.hpp"

#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "selab/error.hpp"

namespace selab::dsp {

namespace {
constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xfffe;
}  // namespace

std::string encode_wav(const Waveform& w, WavFormat format) {
  const std::uint16_t bits = format == WavFormat::Pcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * bits / 8);
  std::string out = "RIFF";
  binary::put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  binary::put_u32(out, 16);
  binary::put_u16(out, format == WavFormat::Pcm16 ? kFormatPcm : kFormatFloat);
  binary::put_u16(out, 1);
  binary::put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  binary::put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * bits / 8);
  binary::put_u16(out, bits / 8);
  binary::put_u16(out, bits);
  out += "data";
  binary::put_u32(out, data_bytes);
  out.reserve(out.size() + data_bytes);
  for (float s : w.samples) {
    if (format == WavFormat::Pcm16) {
      const auto q = static_cast<std::int16_t>(
          std::clamp(std::lrint(static_cast<double>(s) * 32768.0), -32768L, 32767L));
      binary::put_u16(out, static_cast<std::uint16_t>(q));
    } else {
      binary::put_f32(out, s);
    }
  }
  return out;
}

Waveform decode_wav(const std::string& bytes, const std::string& what, int required_rate) {
  binary::Reader r(bytes, what);
  if (r.bytes(4, "RIFF tag") != "RIFF") throw FormatError(what + ": not a RIFF file");
  r.u32("RIFF size");
  if (r.bytes(4, "WAVE tag") != "WAVE") throw FormatError(what + ": not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    if (r.remaining() < 8) throw FormatError(what + ": no data chunk");
    const auto id = std::string(r.bytes(4, "chunk id"));
    const auto size = r.u32("chunk size");
    if (id == "fmt ") {
      if (size < 16) throw FormatError(what + ": fmt chunk too short");
      format = r.u16("format tag");
      channels = r.u16("channels");
      rate = r.u32("sample rate");
      r.u32("byte rate");
      r.u16("block align");
      bits = r.u16("bits per sample");
      std::uint32_t rest = size - 16;
      if (format == kFormatExtensible && rest >= 10) {
        r.u16("extension size");
        r.u16("valid bits");
        r.u32("channel mask");
        format = r.u16("sub format");
        rest -= 10;
      }
      r.skip(rest + (size & 1), "fmt chunk");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError(what + ": data chunk before fmt chunk");
      if (channels != 1)
        throw FormatError(what + ": " + std::to_string(channels) + " channels, only mono is supported");
      if (static_cast<int>(rate) != required_rate)
        throw FormatError(what + ": sample rate " + std::to_string(rate) + " Hz, expected " +
                          std::to_string(required_rate) + " Hz (resampling is not supported)");
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      if (format == kFormatPcm && bits == 16) {
        const auto n = size / 2;
        r.need(static_cast<std::size_t>(n) * 2, "pcm16 samples");
        w.samples.resize(n);
        for (auto& s : w.samples) s = static_cast<float>(static_cast<std::int16_t>(r.u16("sample")) / 32768.0);
      } else if (format == kFormatFloat && bits == 32) {
        const auto n = size / 4;
        w.samples.resize(n);
        r.f32_array(w.samples.data(), n, "float32 samples");
        for (float s : w.samples)
          if (!std::isfinite(s)) throw FormatError(what + ": non-finite sample");
      } else {
        throw FormatError(what + ": unsupported encoding (format " + std::to_string(format) + ", " +
                          std::to_string(bits) + " bits); expected PCM16 or float32");
      }
      return w;
    } else {
      r.skip(size + (size & 1), "chunk body");
    }
  }
}

Waveform read_wav(const std::string& path, int required_rate) {
  return decode_wav(binary::read_file(path), path, required_rate);
}

void write_wav(const std::string& path, const Waveform& w, WavFormat format) {
  binary::write_file(path, encode_wav(w, format));
}

}  // namespace selab::dsp
