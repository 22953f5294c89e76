#include "selab/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "selab/error.hpp"

namespace selab {

std::string to_string(dsp::WindowType w) {
  switch (w) {
    case dsp::WindowType::Hann: return "hann";
    case dsp::WindowType::Hamming: return "hamming";
    case dsp::WindowType::Rectangular: return "rectangular";
  }
  return "?";
}

std::string to_string(dsp::SynthesisType s) {
  return s == dsp::SynthesisType::LeastSquares ? "least_squares" : "overlap_add";
}

std::string to_string(data::MixingMode m) { return m == data::MixingMode::Dynamic ? "dynamic" : "static"; }

dsp::WindowType parse_window(const std::string& s) {
  if (s == "hann") return dsp::WindowType::Hann;
  if (s == "hamming") return dsp::WindowType::Hamming;
  if (s == "rectangular") return dsp::WindowType::Rectangular;
  throw ConfigError("stft.window: expected hann, hamming or rectangular, got '" + s + "'");
}

dsp::SynthesisType parse_synthesis(const std::string& s) {
  if (s == "least_squares") return dsp::SynthesisType::LeastSquares;
  if (s == "overlap_add") return dsp::SynthesisType::OverlapAdd;
  throw ConfigError("stft.synthesis: expected least_squares or overlap_add, got '" + s + "'");
}

data::MixingMode parse_mixing(const std::string& s) {
  if (s == "dynamic") return data::MixingMode::Dynamic;
  if (s == "static") return data::MixingMode::Static;
  throw ConfigError("data.mixing: expected dynamic or static, got '" + s + "'");
}

namespace {

const std::set<std::string> kSections = {"stft",    "model",    "data",     "train", "losses",
                                         "teacher", "pretrain", "finetune", "eval"};

// Re-throws enum parse errors under the full key when the message lacks it.
template <typename F>
auto parse_field(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(key, 0) == 0) throw;
    throw ConfigError(key + ": " + msg);
  }
}

std::uint64_t get_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback, const std::string& full) {
  const auto v = kv.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw ConfigError(full + ": must be >= 0");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

RunConfig RunConfig::from_kv(const KeyValues& all) {
  for (const auto& k : all.keys()) {
    const auto dot = k.find('.');
    if (dot == std::string::npos || !kSections.count(k.substr(0, dot)))
      throw ConfigError(k + ": unknown key (sections are stft, model, data, train, losses, teacher, pretrain, "
                            "finetune, eval)");
  }
  RunConfig c;

  const auto s = all.section("stft.");
  s.reject_unknown({"window_len", "hop", "fft_size", "window", "synthesis", "envelope_floor"}, "stft.");
  c.stft.window_len = static_cast<int>(s.get_int("window_len", c.stft.window_len));
  c.stft.hop = static_cast<int>(s.get_int("hop", c.stft.hop));
  c.stft.fft_size = static_cast<int>(s.get_int("fft_size", c.stft.fft_size));
  c.stft.analysis = parse_window(s.get_string("window", to_string(c.stft.analysis)));
  c.stft.synthesis = parse_synthesis(s.get_string("synthesis", to_string(c.stft.synthesis)));
  c.stft.envelope_floor = s.get_double("envelope_floor", c.stft.envelope_floor);

  c.model = model::GcrnConfig::from_kv(all, "model.");

  const auto d = all.section("data.");
  d.reject_unknown({"manifest", "crop_len", "mixing", "peak"}, "data.");
  c.data.manifest = d.get_string("manifest", c.data.manifest);
  c.data.crop_len = d.get_int("crop_len", c.data.crop_len);
  c.data.mixing = parse_mixing(d.get_string("mixing", to_string(c.data.mixing)));
  c.data.peak = d.get_double("peak", c.data.peak);

  const auto t = all.section("train.");
  t.reject_unknown({"mode", "steps", "batch", "lr", "seed", "clip_norm", "workers", "checkpoint_every", "run_dir"},
                   "train.");
  c.train.mode = parse_field("train.mode", [&] { return train::parse_mode(t.get_string("mode", "baseline")); });
  c.train.steps = t.get_int("steps", c.train.steps);
  c.train.batch = get_u64(t, "batch", c.train.batch, "train.batch");
  c.train.lr = t.get_double("lr", c.train.lr);
  c.train.seed = get_u64(t, "seed", c.train.seed, "train.seed");
  c.train.clip_norm = t.get_double("clip_norm", c.train.clip_norm);
  c.train.workers = get_u64(t, "workers", c.train.workers, "train.workers");
  c.train.checkpoint_every = t.get_int("checkpoint_every", c.train.checkpoint_every);
  c.train.run_dir = t.get_string("run_dir", c.train.run_dir);

  const auto l = all.section("losses.");
  l.reject_unknown({"lambda_embed", "lambda_adversarial", "lambda_triplet", "lambda_output", "margin"}, "losses.");
  c.losses.embed = l.get_double("lambda_embed", c.losses.embed);
  c.losses.adversarial = l.get_double("lambda_adversarial", c.losses.adversarial);
  c.losses.triplet = l.get_double("lambda_triplet", c.losses.triplet);
  c.losses.output = l.get_double("lambda_output", c.losses.output);
  c.losses.margin = l.get_double("margin", c.losses.margin);

  const auto te = all.section("teacher.");
  te.reject_unknown({"source", "dir", "seed", "layers", "dim"}, "teacher.");
  c.teacher.source = te.get_string("source", c.teacher.source);
  c.teacher.dir = te.get_string("dir", c.teacher.dir);
  c.teacher.seed = get_u64(te, "seed", c.teacher.seed, "teacher.seed");
  c.teacher.layers = static_cast<int>(te.get_int("layers", c.teacher.layers));
  c.teacher.dim = static_cast<int>(te.get_int("dim", c.teacher.dim));

  const auto p = all.section("pretrain.");
  p.reject_unknown({"steps", "loss", "input", "encoder_checkpoint"}, "pretrain.");
  c.pretrain.steps = p.get_int("steps", c.pretrain.steps);
  c.pretrain.loss = train::parse_encoder_loss(p.get_string("loss", to_string(c.pretrain.loss)));
  c.pretrain.input = train::parse_decoder_input(p.get_string("input", to_string(c.pretrain.input)));
  c.pretrain.encoder_checkpoint = p.get_string("encoder_checkpoint", c.pretrain.encoder_checkpoint);

  const auto f = all.section("finetune.");
  f.reject_unknown({"encoder_checkpoint", "decoder_checkpoint"}, "finetune.");
  c.finetune.encoder_checkpoint = f.get_string("encoder_checkpoint", "");
  c.finetune.decoder_checkpoint = f.get_string("decoder_checkpoint", "");

  const auto e = all.section("eval.");
  e.reject_unknown({"checkpoint", "report", "json", "include_input"}, "eval.");
  c.eval.checkpoint = e.get_string("checkpoint", "");
  c.eval.report = e.get_string("report", "");
  c.eval.json = e.get_string("json", "");
  c.eval.include_input = e.get_bool("include_input", c.eval.include_input);

  c.validate();
  return c;
}

RunConfig RunConfig::parse(const std::string& text) { return from_kv(KeyValues::parse(text, "config")); }

RunConfig RunConfig::load(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  KeyValues kv;
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    kv = KeyValues::parse(ss.str(), path);
  }
  for (const auto& [k, v] : overrides) kv.set(k, v);
  return from_kv(kv);
}

KeyValues RunConfig::to_kv() const {
  KeyValues kv;
  kv.set("stft.window_len", std::to_string(stft.window_len));
  kv.set("stft.hop", std::to_string(stft.hop));
  kv.set("stft.fft_size", std::to_string(stft.fft_size));
  kv.set("stft.window", to_string(stft.analysis));
  kv.set("stft.synthesis", to_string(stft.synthesis));
  kv.set("stft.envelope_floor", format_double(stft.envelope_floor));
  const auto m = model.to_kv("model.");
  for (const auto& k : m.keys()) kv.set(k, m.get(k));
  kv.set("data.manifest", data.manifest);
  kv.set("data.crop_len", std::to_string(data.crop_len));
  kv.set("data.mixing", to_string(data.mixing));
  kv.set("data.peak", format_double(data.peak));
  kv.set("train.mode", train::to_string(train.mode));
  kv.set("train.steps", std::to_string(train.steps));
  kv.set("train.batch", std::to_string(train.batch));
  kv.set("train.lr", format_double(train.lr));
  kv.set("train.seed", std::to_string(train.seed));
  kv.set("train.clip_norm", format_double(train.clip_norm));
  kv.set("train.workers", std::to_string(train.workers));
  kv.set("train.checkpoint_every", std::to_string(train.checkpoint_every));
  kv.set("train.run_dir", train.run_dir);
  kv.set("losses.lambda_embed", format_double(losses.embed));
  kv.set("losses.lambda_adversarial", format_double(losses.adversarial));
  kv.set("losses.lambda_triplet", format_double(losses.triplet));
  kv.set("losses.lambda_output", format_double(losses.output));
  kv.set("losses.margin", format_double(losses.margin));
  kv.set("teacher.source", teacher.source);
  kv.set("teacher.dir", teacher.dir);
  kv.set("teacher.seed", std::to_string(teacher.seed));
  kv.set("teacher.layers", std::to_string(teacher.layers));
  kv.set("teacher.dim", std::to_string(teacher.dim));
  kv.set("pretrain.steps", std::to_string(pretrain.steps));
  kv.set("pretrain.loss", to_string(pretrain.loss));
  kv.set("pretrain.input", to_string(pretrain.input));
  kv.set("pretrain.encoder_checkpoint", pretrain.encoder_checkpoint);
  kv.set("finetune.encoder_checkpoint", finetune.encoder_checkpoint);
  kv.set("finetune.decoder_checkpoint", finetune.decoder_checkpoint);
  kv.set("eval.checkpoint", eval.checkpoint);
  kv.set("eval.report", eval.report);
  kv.set("eval.json", eval.json);
  kv.set("eval.include_input", eval.include_input ? "true" : "false");
  return kv;
}

std::string RunConfig::str() const { return to_kv().str(); }

void RunConfig::validate() const {
  stft.validate();
  model.validate();
  if (model.input_bins != stft.bins())
    throw ConfigError("model.input_bins: " + std::to_string(model.input_bins) + " does not match stft.fft_size / 2 + 1 = " +
                      std::to_string(stft.bins()));
  if (data.crop_len < stft.window_len)
    throw ConfigError("data.crop_len: must cover at least one stft window (" + std::to_string(stft.window_len) + ")");
  if (!(data.peak > 0) || data.peak > 1) throw ConfigError("data.peak: must be in (0, 1]");
  if (teacher.source != "none" && teacher.source != "synthetic" && teacher.source != "file")
    throw ConfigError("teacher.source: expected none, synthetic or file, got '" + teacher.source + "'");
  if (teacher.source == "file" && teacher.dir.empty())
    throw ConfigError("teacher.dir: required when teacher.source is file");
  if (teacher.layers < 1) throw ConfigError("teacher.layers: must be >= 1");
  if (teacher.dim < 1) throw ConfigError("teacher.dim: must be >= 1");
  if (pretrain.steps < 1) throw ConfigError("pretrain.steps: must be >= 1");
  train_config().validate();
}

train::LoopOptions RunConfig::loop_options(std::int64_t steps) const {
  train::LoopOptions l;
  l.steps = steps;
  l.batch = train.batch;
  l.lr = train.lr;
  l.seed = train.seed;
  l.clip_norm = train.clip_norm;
  l.workers = train.workers;
  l.mixing = data.mixing;
  l.peak = data.peak;
  l.checkpoint_every = train.checkpoint_every;
  l.run_dir = train.run_dir;
  l.stft = stft;
  return l;
}

train::TrainConfig RunConfig::train_config() const {
  train::TrainConfig t;
  t.mode = train.mode;
  t.loop = loop_options(train.steps);
  t.weights = losses;
  t.teacher = teacher;
  return t;
}

train::PretrainConfig RunConfig::pretrain_config() const {
  train::PretrainConfig p;
  p.loop = loop_options(pretrain.steps);
  p.teacher = teacher;
  p.encoder_loss = pretrain.loss;
  p.decoder_input = pretrain.input;
  p.encoder_checkpoint = pretrain.encoder_checkpoint;
  return p;
}

}  // namespace selab
