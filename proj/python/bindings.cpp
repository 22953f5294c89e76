#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <complex>
#include <cstring>

#include "selab/analysis.hpp"
#include "selab/data.hpp"
#include "selab/dsp.hpp"
#include "selab/gcrn.hpp"
#include "selab/metrics.hpp"
#include "selab/teacher.hpp"

namespace py = pybind11;
using namespace selab;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

std::span<const float> as_span(const FloatArray& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D array, got " + std::to_string(a.ndim()) + " dimensions");
  return {a.data(), static_cast<std::size_t>(a.size())};
}

dsp::StftConfig stft_config(int window_len, int hop, int fft_size) {
  dsp::StftConfig c;
  c.window_len = window_len;
  c.hop = hop;
  c.fft_size = fft_size;
  c.validate();
  return c;
}

teacher::EmbeddingSequence to_sequence(const FloatArray& a, std::uint32_t hop, std::uint32_t rate) {
  if (a.ndim() != 3) throw ShapeError("embeddings must be [layers, frames, dim]");
  teacher::EmbeddingSequence e;
  e.layers = a.shape(0);
  e.frames = a.shape(1);
  e.dim = a.shape(2);
  e.hop_samples = hop;
  e.sample_rate = rate;
  e.data.assign(a.data(), a.data() + a.size());
  e.validate();
  return e;
}

py::dict from_sequence(const teacher::EmbeddingSequence& e) {
  FloatArray arr({e.layers, e.frames, e.dim});
  std::memcpy(arr.mutable_data(), e.data.data(), e.data.size() * sizeof(float));
  py::dict d;
  d["data"] = arr;
  d["hop_samples"] = e.hop_samples;
  d["sample_rate"] = e.sample_rate;
  return d;
}

FloatArray to_array(const std::vector<float>& v) {
  FloatArray a(static_cast<py::ssize_t>(v.size()));
  std::memcpy(a.mutable_data(), v.data(), v.size() * sizeof(float));
  return a;
}

analysis::FrameSequence to_frames(const FloatArray& a, double hop_ms) {
  if (a.ndim() != 2) throw ShapeError("frames must be [frames, dim]");
  analysis::FrameSequence s;
  s.frames = a.shape(0);
  s.dim = a.shape(1);
  s.hop_ms = hop_ms;
  s.data.assign(a.data(), a.data() + a.size());
  return s;
}

py::dict box_dict(const analysis::BoxStats& b) {
  py::dict d;
  d["count"] = b.count;
  d["q1"] = b.q1;
  d["median"] = b.median;
  d["q3"] = b.q3;
  d["whisker_lo"] = b.whisker_lo;
  d["whisker_hi"] = b.whisker_hi;
  d["mean"] = b.mean;
  d["outliers"] = b.outliers;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Speech enhancement toolkit: SEB1 embedding files, STFT, metrics and lag analysis.";

  auto base = py::register_exception<Error>(m, "SelabError", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base);
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<IoError>(m, "IoError", base);

  m.attr("SEB_VERSION") = teacher::kSebVersion;

  m.def(
      "encode_seb",
      [](const FloatArray& data, std::uint32_t hop, std::uint32_t rate) {
        return py::bytes(teacher::encode_seb(to_sequence(data, hop, rate)));
      },
      py::arg("data"), py::arg("hop_samples") = 320, py::arg("sample_rate") = 16000,
      "Serializes [layers, frames, dim] float32 embeddings as SEB1 bytes.");
  m.def(
      "decode_seb", [](const py::bytes& b) { return from_sequence(teacher::decode_seb(std::string(b))); },
      py::arg("payload"), "Parses SEB1 bytes into a dict with data, hop_samples and sample_rate.");
  m.def(
      "save_embeddings",
      [](const std::string& path, const FloatArray& data, std::uint32_t hop, std::uint32_t rate) {
        teacher::save_embeddings(path, to_sequence(data, hop, rate));
      },
      py::arg("path"), py::arg("data"), py::arg("hop_samples") = 320, py::arg("sample_rate") = 16000);
  m.def(
      "load_embeddings", [](const std::string& path) { return from_sequence(teacher::load_embeddings(path)); },
      py::arg("path"));

  m.def(
      "frame_count",
      [](std::int64_t n, int window_len, int hop, int fft_size) {
        return dsp::frame_count(n, stft_config(window_len, hop, fft_size));
      },
      py::arg("samples"), py::arg("window_len") = 400, py::arg("hop") = 320, py::arg("fft_size") = 512,
      "Number of STFT frames for a signal of `samples` samples.");
  m.def(
      "stft",
      [](const FloatArray& x, int window_len, int hop, int fft_size) {
        auto s = dsp::stft(as_span(x), stft_config(window_len, hop, fft_size));
        py::array_t<std::complex<float>> out({s.frames, s.bins});
        auto* p = out.mutable_data();
        for (std::int64_t i = 0; i < s.frames * s.bins; ++i) p[i] = {s.real[i], s.imag[i]};
        return out;
      },
      py::arg("samples"), py::arg("window_len") = 400, py::arg("hop") = 320, py::arg("fft_size") = 512,
      "Complex spectrogram [frames, bins] of a 1-D signal.");
  m.def(
      "istft",
      [](const py::array_t<std::complex<float>, py::array::c_style | py::array::forcecast>& spec, int window_len,
         int hop, int fft_size) {
        if (spec.ndim() != 2) throw ShapeError("spectrogram must be [frames, bins]");
        dsp::ComplexSpectrogram s(spec.shape(0), spec.shape(1));
        const auto* p = spec.data();
        for (std::int64_t i = 0; i < s.frames * s.bins; ++i) {
          s.real[i] = p[i].real();
          s.imag[i] = p[i].imag();
        }
        return to_array(dsp::istft(s, stft_config(window_len, hop, fft_size)).samples);
      },
      py::arg("spectrogram"), py::arg("window_len") = 400, py::arg("hop") = 320, py::arg("fft_size") = 512);

  m.def(
      "sisdr", [](const FloatArray& est, const FloatArray& ref) { return metrics::eval_sisdr(as_span(est), as_span(ref)); },
      py::arg("estimate"), py::arg("reference"), "Scale-invariant SDR in dB.");
  m.def(
      "stoi", [](const FloatArray& est, const FloatArray& ref) { return metrics::eval_stoi(as_span(est), as_span(ref)); },
      py::arg("estimate"), py::arg("reference"), "Short-time objective intelligibility of 16 kHz signals.");

  m.def(
      "lag_correlation",
      [](const FloatArray& frames, double lag_ms, double hop_ms) {
        auto s = analysis::lag_correlation(to_frames(frames, hop_ms), lag_ms);
        return py::make_tuple(py::array_t<double>(s.values.size(), s.values.data()), s.skipped);
      },
      py::arg("frames"), py::arg("lag_ms"), py::arg("hop_ms") = 20.0,
      "Pearson correlation between frames t and t + lag; returns (values, skipped).");
  m.def(
      "lag_distance",
      [](const FloatArray& frames, double lag_ms, bool normalized, double hop_ms) {
        auto s = analysis::lag_euclidean(to_frames(frames, hop_ms), lag_ms, normalized);
        return py::array_t<double>(s.values.size(), s.values.data());
      },
      py::arg("frames"), py::arg("lag_ms"), py::arg("normalized") = false, py::arg("hop_ms") = 20.0);
  m.def(
      "box_stats", [](std::vector<double> v) { return box_dict(analysis::box_stats(std::move(v))); },
      py::arg("values"));

  m.def(
      "manifest_stems",
      [](const std::string& path) {
        auto man = data::load_manifest(path);
        py::list out;
        for (std::size_t i = 0; i < man.records.size(); ++i) {
          const auto& r = man.records[i];
          out.append(py::make_tuple(data::record_stem(i, r), r.clean_path, r.noise_path));
        }
        return out;
      },
      py::arg("path"), "(stem, clean_path, noise_path) per manifest record, stems as used for embedding files.");

  m.def(
      "enhance",
      [](const std::string& checkpoint, const FloatArray& noisy) {
        auto model = model::load_model(checkpoint);
        if (model.config().conditioning != model::Conditioning::None)
          throw ConfigError("model.conditioning: concat models need teacher embeddings; use the se-lab tool");
        Tensor<float> out;
        {
          py::gil_scoped_release release;
          NoGradGuard ng;
          out = metrics::enhance(model, dsp::to_tensor(dsp::stft(as_span(noisy))));
        }
        return to_array(std::vector<float>(out.data().begin(), out.data().end()));
      },
      py::arg("checkpoint"), py::arg("noisy"), "Enhances a 16 kHz signal with a saved teacher-free model.");
}
