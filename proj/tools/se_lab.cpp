// se-lab: command line entry point for mixing, training, evaluation and
// embedding analysis.

#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "selab/analysis.hpp"
#include "selab/checkpoint.hpp"
#include "selab/config.hpp"
#include "selab/error.hpp"
#include "selab/gradcheck.hpp"
#include "selab/metrics.hpp"
#include "selab/train.hpp"
#include "selab/wav.hpp"

namespace fs = std::filesystem;
using namespace selab;

namespace {

// Command line flags that map onto config keys. Only flags actually given
// become overrides, in declaration order.
class KeyFlags {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& s = slots_.emplace_back();
    s.key = key;
    s.opt = app->add_option(flag, s.value, help + " [" + key + "]");
  }
  void add_switch(CLI::App* app, const std::string& flag, const std::string& key, const std::string& value,
                  const std::string& help) {
    auto& s = slots_.emplace_back();
    s.key = key;
    s.value = value;
    s.opt = app->add_flag(flag)->description(help + " [" + key + " = " + value + "]");
  }
  void collect(std::vector<std::pair<std::string, std::string>>& out) const {
    for (const auto& s : slots_)
      if (s.opt->count()) out.emplace_back(s.key, s.value);
  }

 private:
  struct Slot {
    std::string key;
    std::string value;
    CLI::Option* opt = nullptr;
  };
  std::deque<Slot> slots_;
};

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  KeyFlags flags;

  RunConfig load() const {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set: expected key=value, got '" + s + "'");
      auto trim = [](std::string v) {
        v.erase(0, v.find_first_not_of(" \t"));
        v.erase(v.find_last_not_of(" \t") + 1);
        return v;
      };
      overrides.emplace_back(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    flags.collect(overrides);
    if (seed_opt->count()) overrides.emplace_back("train.seed", std::to_string(seed));
    return RunConfig::load(config, overrides);
  }
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

std::string require(const std::string& value, const std::string& key, const std::string& flag) {
  if (value.empty()) throw ConfigError(key + ": required (set it in the config or pass " + flag + ")");
  return value;
}

// Materialized config and seed, written before the first step.
void write_run_header(const RunConfig& cfg) {
  const auto& dir = cfg.train.run_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir + ": " + ec.message());
  write_text((fs::path(dir) / "config.txt").string(), cfg.str());
  write_text((fs::path(dir) / "seed").string(), std::to_string(cfg.train.seed) + "\n");
}

data::MixManifest manifest_of(const RunConfig& cfg) {
  return data::load_manifest(require(cfg.data.manifest, "data.manifest", "--manifest"), cfg.data.crop_len);
}

data::IteratorOptions static_items(const RunConfig& cfg) {
  data::IteratorOptions o;
  o.seed = cfg.train.seed;
  o.mixing = data::MixingMode::Static;
  o.peak = cfg.data.peak;
  o.stft = cfg.stft;
  return o;
}

std::function<void(const train::StepRecord&)> progress(std::int64_t every) {
  if (every <= 0) return {};
  return [every](const train::StepRecord& r) {
    if (r.step % every == 0) std::cerr << r.line() << "\n";
  };
}

// ---- subcommands ---------------------------------------------------------------

int cmd_mix(const RunConfig& cfg, std::int64_t synthesize, std::int64_t length, const std::string& snr,
            const std::string& out_dir) {
  fs::create_directories(out_dir);
  if (synthesize > 0) {
    auto corpus = data::synthetic_corpus(static_cast<std::size_t>(synthesize), length, data::SnrSpec::parse(snr),
                                         cfg.train.seed);
    data::MixManifest m = corpus.manifest;
    for (auto& r : m.records) {
      for (auto* p : {&r.clean_path, &r.noise_path}) {
        dsp::write_wav((fs::path(out_dir) / (*p + ".wav")).string(), corpus.clips->at(*p));
        *p += ".wav";
      }
    }
    write_text((fs::path(out_dir) / "manifest.tsv").string(), data::format_manifest(m));
    std::cerr << "wrote " << m.records.size() << " clean/noise pairs and manifest.tsv to " << out_dir << "\n";
    return 0;
  }
  const auto manifest = manifest_of(cfg);
  const auto opts = static_items(cfg);
  const auto loader = data::wav_loader();
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto item = data::make_item(manifest.records[i], i, 0, opts, loader);
    const auto stem = data::record_stem(i, manifest.records[i]);
    dsp::write_wav((fs::path(out_dir) / (stem + ".noisy.wav")).string(), item.noisy);
    dsp::write_wav((fs::path(out_dir) / (stem + ".clean.wav")).string(), item.clean);
    std::cout << stem << "\t" << format_double(item.snr_db) << "\n";
  }
  return 0;
}

int cmd_embed_synthetic(const RunConfig& cfg, const std::string& out_dir) {
  const auto manifest = manifest_of(cfg);
  const auto opts = static_items(cfg);
  const auto loader = data::wav_loader();
  teacher::SyntheticTeacher t(cfg.teacher.seed, cfg.teacher.layers, cfg.teacher.dim, cfg.stft.bins());
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto item = data::make_item(manifest.records[i], i, 0, opts, loader);
    const auto stem = data::record_stem(i, manifest.records[i]);
    teacher::save_embeddings((fs::path(out_dir) / (stem + ".seb")).string(), t.embed(item.clean, cfg.stft));
    teacher::save_embeddings((fs::path(out_dir) / (stem + ".noisy.seb")).string(), t.embed(item.noisy, cfg.stft));
  }
  std::cerr << "wrote " << 2 * manifest.records.size() << " embedding files to " << out_dir << "\n";
  return 0;
}

void print_run_summary(const train::RunResult& r, const std::string& dir) {
  if (r.log.empty()) return;
  const auto [first, last] = train::smoothed_endpoints(r.log, "loss");
  std::cout << "steps\t" << r.log.size() << "\n"
            << "seconds\t" << format_double(r.seconds) << "\n"
            << "loss_start\t" << format_double(first) << "\n"
            << "loss_end\t" << format_double(last) << "\n";
  if (!r.layer_weights.empty()) {
    std::cout << "layer_weights";
    for (double w : r.layer_weights) std::cout << "\t" << format_double(w);
    std::cout << "\n";
  }
  std::cout << "model\t" << (fs::path(dir) / "model.gck").string() << "\n";
}

int cmd_train(RunConfig cfg, std::int64_t log_every) {
  require(cfg.train.run_dir, "train.run_dir", "--out");
  const auto manifest = manifest_of(cfg);
  auto tc = cfg.train_config();
  tc.loop.on_step = progress(log_every);
  // Construction checks the teacher requirement before anything is written.
  train::Trainer trainer(tc, cfg.model, manifest);
  write_run_header(cfg);
  print_run_summary(trainer.run(), cfg.train.run_dir);
  return 0;
}

int cmd_pretrain(RunConfig cfg, bool encoder, std::int64_t log_every) {
  require(cfg.train.run_dir, "train.run_dir", "--out");
  const auto manifest = manifest_of(cfg);
  auto pc = cfg.pretrain_config();
  pc.loop.on_step = progress(log_every);
  if (pc.teacher.source == "none")
    throw ConfigError("teacher.source: pre-training needs teacher embeddings; set teacher.source to synthetic or file");
  if (!encoder && pc.decoder_input == train::DecoderInput::FrozenEncoder)
    require(pc.encoder_checkpoint, "pretrain.encoder_checkpoint", "--encoder-ckpt");
  write_run_header(cfg);
  auto r = encoder ? train::pretrain_encoder(pc, cfg.model, manifest) : train::pretrain_decoder(pc, cfg.model, manifest);
  print_run_summary(r.run, cfg.train.run_dir);
  std::cout << "loss_reduction\t" << format_double(r.reduction()) << "\n";
  return 0;
}

int cmd_finetune(RunConfig cfg, std::int64_t log_every) {
  require(cfg.train.run_dir, "train.run_dir", "--out");
  const auto enc = require(cfg.finetune.encoder_checkpoint, "finetune.encoder_checkpoint", "--encoder-ckpt");
  const auto dec = require(cfg.finetune.decoder_checkpoint, "finetune.decoder_checkpoint", "--decoder-ckpt");
  const auto manifest = manifest_of(cfg);
  auto tc = cfg.train_config();
  tc.loop.on_step = progress(log_every);
  auto trainer = train::make_finetuner(tc, cfg.model, enc, dec, manifest);
  write_run_header(cfg);
  print_run_summary(trainer->run(), cfg.train.run_dir);
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const auto ckpt = require(cfg.eval.checkpoint, "eval.checkpoint", "--ckpt");
  const auto manifest = manifest_of(cfg);
  auto model = model::load_model(ckpt);
  metrics::EvalOptions opts;
  opts.stft = cfg.stft;
  opts.peak = cfg.data.peak;
  opts.include_input = cfg.eval.include_input;
  for (const auto& t : load_checkpoint(ckpt))
    if (t.name == "aux.layer_logits") opts.layer_logits = t.data;
  std::unique_ptr<teacher::TeacherSource> teacher;
  if (model.config().conditioning == model::Conditioning::Concat && cfg.teacher.source != "none")
    teacher = train::make_teacher(cfg.teacher, manifest, cfg.stft);
  const auto report = metrics::evaluate(model, manifest, data::wav_loader(), teacher.get(), opts);
  if (cfg.eval.report.empty())
    std::cout << report.to_tsv();
  else
    write_text(cfg.eval.report, report.to_tsv());
  if (!cfg.eval.json.empty()) write_text(cfg.eval.json, report.to_json());
  std::cerr << "sisdr_db " << format_double(report.sisdr().mean) << "  stoi " << format_double(report.stoi().mean)
            << "  over " << report.rows.size() << " utterances\n";
  return 0;
}

std::vector<double> parse_lags(const std::string& text) {
  std::vector<double> lags;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw ConfigError("analysis.lags: '" + item + "' is not a number");
    lags.push_back(v);
  }
  return lags;
}

int cmd_analyze(const std::vector<std::string>& files, const std::string& lags, const std::string& metric,
                bool normalized, std::int64_t layer, const std::string& out, const std::string& samples) {
  const auto r = analysis::analyze(files, parse_lags(lags), analysis::parse_metric(metric), normalized, layer);
  if (out.empty())
    std::cout << r.stats_tsv();
  else
    write_text(out, r.stats_tsv());
  if (!samples.empty()) write_text(samples, r.samples_tsv());
  return 0;
}

int cmd_gradcheck(unsigned seed) {
  const auto results = run_gradcheck_suite(seed);
  std::size_t failed = 0;
  double seconds = 0;
  for (const auto& r : results) {
    std::printf("%-28s rel_error %.3e  %s\n", r.name.c_str(), r.max_rel_error, r.passed ? "ok" : "FAILED");
    failed += r.passed ? 0 : 1;
    seconds += r.seconds;
  }
  std::printf("%zu checks, %zu failed, %.2f s\n", results.size(), failed, seconds);
  return failed ? 1 : 0;
}

int cmd_inspect(const std::string& path) {
  const auto tensors = load_checkpoint(path);
  std::size_t total = 0, model_params = 0;
  for (const auto& t : tensors) {
    std::cout << t.name << "\t" << to_string(t.shape) << "\t" << t.data.size() << "\n";
    total += t.data.size();
    if (t.name.rfind("aux.", 0) != 0) model_params += t.data.size();
  }
  std::cout << "# tensors\t" << tensors.size() << "\n"
            << "# model_parameters\t" << model_params << "\n"
            << "# all_values\t" << total << "\n"
            << "# file_bytes\t" << fs::file_size(path) << "\n";
  if (fs::exists(path + ".cfg")) std::cout << "# config\n" << model::load_model_config(path).to_kv().str();
  return 0;
}

int cmd_export_spectrogram(const RunConfig& cfg, const std::string& in, const std::string& out) {
  analysis::export_spectrogram(dsp::read_wav(in), out, cfg.stft);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"se-lab: causal speech enhancement training and analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Config file of dotted key = value lines");
  app.add_option("--set", g.sets, "Override one config key (key=value); repeatable");
  g.seed_opt = app.add_option("--seed", g.seed, "Seed for every random stream [train.seed]");

  auto* mix = app.add_subcommand("mix", "Write static mixtures of a manifest, or synthesize a corpus");
  std::int64_t synth_n = 0, synth_len = 16000;
  std::string synth_snr = "-5", mix_out;
  g.flags.add(mix, "--manifest", "data.manifest", "Mixing manifest");
  mix->add_option("--synthesize", synth_n, "Synthesize N clean/noise pairs plus a manifest instead");
  mix->add_option("--length", synth_len, "Synthetic clip length in samples");
  mix->add_option("--snr", synth_snr, "Synthetic manifest SNR, x or lo:hi dB");
  mix->add_option("--out", mix_out, "Output directory")->required();

  auto* embed = app.add_subcommand("embed-synthetic", "Write synthetic teacher embeddings for a manifest");
  std::string embed_out;
  g.flags.add(embed, "--manifest", "data.manifest", "Mixing manifest");
  g.flags.add(embed, "--teacher-layers", "teacher.layers", "Layers");
  g.flags.add(embed, "--teacher-dim", "teacher.dim", "Embedding width");
  embed->add_option("--out", embed_out, "Output directory")->required();

  std::int64_t log_every = 100;
  auto add_loop_flags = [&](CLI::App* sub) {
    g.flags.add(sub, "--manifest", "data.manifest", "Mixing manifest");
    g.flags.add(sub, "--out", "train.run_dir", "Run directory");
    g.flags.add(sub, "--batch", "train.batch", "Batch size");
    g.flags.add(sub, "--lr", "train.lr", "Adam learning rate");
    g.flags.add(sub, "--preset", "model.preset", "Model preset: default or tiny");
    g.flags.add(sub, "--mixing", "data.mixing", "dynamic or static");
    g.flags.add(sub, "--teacher", "teacher.source", "Teacher source: none, synthetic or file");
    g.flags.add(sub, "--teacher-dir", "teacher.dir", "Directory of .seb files");
    sub->add_option("--log-every", log_every, "Print every Nth metric record to stderr (0: quiet)");
  };

  auto* tr = app.add_subcommand("train", "Train an enhancement model");
  add_loop_flags(tr);
  g.flags.add(tr, "--mode", "train.mode", "Training mode");
  g.flags.add(tr, "--steps", "train.steps", "Optimizer steps");

  auto* pe = app.add_subcommand("pretrain-encoder", "Pre-train the encoder against teacher embeddings");
  add_loop_flags(pe);
  g.flags.add(pe, "--steps", "pretrain.steps", "Optimizer steps");
  g.flags.add(pe, "--loss", "pretrain.loss", "l1, l2 or cosine");

  auto* pd = app.add_subcommand("pretrain-decoder", "Pre-train the decoder");
  add_loop_flags(pd);
  g.flags.add(pd, "--steps", "pretrain.steps", "Optimizer steps");
  g.flags.add(pd, "--input", "pretrain.input", "teacher or frozen_encoder");
  g.flags.add(pd, "--encoder-ckpt", "pretrain.encoder_checkpoint", "Encoder checkpoint for frozen_encoder input");

  auto* ft = app.add_subcommand("finetune", "Baseline training from pre-trained encoder and decoder");
  add_loop_flags(ft);
  g.flags.add(ft, "--steps", "train.steps", "Optimizer steps");
  g.flags.add(ft, "--encoder-ckpt", "finetune.encoder_checkpoint", "Checkpoint providing encoder.*");
  g.flags.add(ft, "--decoder-ckpt", "finetune.decoder_checkpoint", "Checkpoint providing decoder.*");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint with SI-SDR and STOI");
  g.flags.add(ev, "--manifest", "data.manifest", "Mixing manifest");
  g.flags.add(ev, "--ckpt", "eval.checkpoint", "Model checkpoint");
  g.flags.add(ev, "--report", "eval.report", "TSV report path (default: stdout)");
  g.flags.add(ev, "--json", "eval.json", "JSON report path");
  g.flags.add_switch(ev, "--no-input", "eval.include_input", "false", "Skip scoring the noisy input");
  g.flags.add(ev, "--teacher", "teacher.source", "Teacher source for concat models");
  g.flags.add(ev, "--teacher-dir", "teacher.dir", "Directory of .seb files");

  auto* an = app.add_subcommand("analyze", "Frame-pair statistics of embedding files at fixed lags");
  std::vector<std::string> an_files;
  std::string an_lags = "20,60,400,1000,2000", an_metric = "corr", an_out, an_samples;
  bool an_norm = false;
  std::int64_t an_layer = -1;
  an->add_option("files", an_files, "SEB embedding files")->required();
  an->add_option("--lags", an_lags, "Comma-separated lags in ms");
  an->add_option("--metric", an_metric, "corr or l2");
  an->add_flag("--normalized", an_norm, "Divide l2 distances by the mean frame norm");
  an->add_option("--layer", an_layer, "Layer index, negative counts from the last");
  an->add_option("--out", an_out, "Stats TSV path (default: stdout)");
  an->add_option("--samples", an_samples, "Also write every sample to this TSV");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");

  auto* ins = app.add_subcommand("inspect-checkpoint", "List the tensors of a checkpoint");
  std::string ins_path;
  ins->add_option("path", ins_path, "Checkpoint")->required();

  auto* sp = app.add_subcommand("export-spectrogram", "Write a log-magnitude spectrogram as CSV");
  std::string sp_in, sp_out;
  sp->add_option("--in", sp_in, "Input WAV")->required();
  sp->add_option("--out", sp_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const auto cfg = g.load();
    if (*mix) return cmd_mix(cfg, synth_n, synth_len, synth_snr, mix_out);
    if (*embed) return cmd_embed_synthetic(cfg, embed_out);
    if (*tr) return cmd_train(cfg, log_every);
    if (*pe) return cmd_pretrain(cfg, true, log_every);
    if (*pd) return cmd_pretrain(cfg, false, log_every);
    if (*ft) return cmd_finetune(cfg, log_every);
    if (*ev) return cmd_eval(cfg);
    if (*an) return cmd_analyze(an_files, an_lags, an_metric, an_norm, an_layer, an_out, an_samples);
    if (*gc) return cmd_gradcheck(g.seed_opt->count() ? static_cast<unsigned>(g.seed) : 7u);
    if (*ins) return cmd_inspect(ins_path);
    if (*sp) return cmd_export_spectrogram(cfg, sp_in, sp_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
