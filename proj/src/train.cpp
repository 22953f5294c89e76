#include "selab/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "selab/error.hpp"
#include "selab/ops.hpp"

namespace selab::train {

using teacher::TeacherSource;

namespace {

struct ModeInfo {
  Mode mode;
  const char* name;
};

constexpr ModeInfo kModeNames[] = {
    {Mode::Baseline, "baseline"},
    {Mode::Concat, "concat"},
    {Mode::ConcatWs, "concat_ws"},
    {Mode::DistillEmbed, "distill_embed"},
    {Mode::DistillEmbedWs, "distill_embed_ws"},
    {Mode::DistillOutput, "distill_output"},
    {Mode::DistillAdv, "distill_adv"},
    {Mode::DistillAdvWs, "distill_adv_ws"},
    {Mode::DistillTriplet, "distill_triplet"},
    {Mode::DistillTripletWs, "distill_triplet_ws"},
};

// Stream tags for derive_seed.
enum SeedTag : std::uint64_t { kModelSeed = 1, kDataSeed = 2, kProjSeed = 3, kDiscSeed = 4, kAdapterSeed = 5 };

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

data::IteratorOptions iterator_options(const LoopOptions& loop) {
  data::IteratorOptions o;
  o.batch = loop.batch;
  o.seed = derive_seed(loop.seed, kDataSeed);
  o.workers = loop.workers;
  o.shuffle = true;
  o.drop_last = false;
  o.mixing = loop.mixing;
  o.peak = loop.peak;
  o.stft = loop.stft;
  return o;
}

void validate_loop(const LoopOptions& l) {
  if (l.steps < 1) throw ConfigError("train.steps: must be >= 1");
  if (l.batch < 1) throw ConfigError("train.batch: must be >= 1");
  if (!(l.lr > 0) || !std::isfinite(l.lr)) throw ConfigError("train.lr: must be > 0");
  if (!(l.clip_norm > 0)) throw ConfigError("train.clip_norm: must be > 0");
  if (l.workers < 1) throw ConfigError("train.workers: must be >= 1");
  if (l.checkpoint_every < 0) throw ConfigError("train.checkpoint_every: must be >= 0");
}

// Metric log and checkpoints under the run directory; inert when the
// directory is empty.
class RunFiles {
 public:
  explicit RunFiles(const std::string& dir) : dir_(dir) {
    if (dir_.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create run directory " + dir_ + ": " + ec.message());
    log_.open(path("metrics.log"), std::ios::binary | std::ios::trunc);
    if (!log_) throw IoError("cannot write " + path("metrics.log"));
  }

  std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }
  bool enabled() const { return !dir_.empty(); }

  void log(const StepRecord& r) {
    if (!enabled()) return;
    log_ << r.line() << '\n';
    log_.flush();
  }

  std::string save(const std::string& name, const model::Gcrn<float>& m, const std::vector<NamedTensor>& aux) const {
    if (!enabled()) return {};
    model::save_model(path(name), m, aux);
    return path(name);
  }

 private:
  std::string dir_;
  std::ofstream log_;
};

// Aborts the run when any logged value is not finite. The weights are
// still those of the previous step, so they are saved as the last good state.
void guard_finite(const StepRecord& r, const model::Gcrn<float>& m, const std::vector<NamedTensor>& aux,
                  RunFiles& files) {
  for (const auto& [key, v] : r.values) {
    if (std::isfinite(v)) continue;
    files.log(r);
    std::string msg = "step " + std::to_string(r.step) + ": non-finite " + key + " (" + fmt(v) + ")";
    if (files.enabled())
      msg += "; last good weights saved to " + files.save("last_good.gck", m, aux);
    throw TrainingError(msg);
  }
}

std::vector<NamedTensor> named(const std::string& name, const Tensor<float>& t) {
  return {{name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())}};
}

void append(std::vector<NamedTensor>& out, std::vector<NamedTensor> more) {
  out.insert(out.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
}

std::vector<NamedTensor> linear_state(const std::string& prefix, const losses::Linear<float>& l) {
  auto out = named(prefix + ".weight", l.weight);
  append(out, named(prefix + ".bias", l.bias));
  return out;
}

// Truncates the batch spectrogram and teacher embeddings to a common
// frame count.
struct Aligned {
  Tensor<float> spec;
  Tensor<float> clean_wave;
  std::int64_t frames = 0;
};

Aligned align(const data::Batch& batch, std::int64_t teacher_frames, const dsp::StftConfig& stft) {
  Aligned a;
  const std::int64_t t = batch.noisy_spec.dim(2);
  a.frames = teacher_frames > 0 ? std::min(t, teacher_frames) : t;
  a.spec = a.frames == t ? batch.noisy_spec : ops::slice(batch.noisy_spec, 2, 0, a.frames);
  const std::int64_t n = (a.frames - 1) * stft.hop + stft.window_len;
  a.clean_wave = ops::slice(batch.clean_wave, 1, 0, n);
  return a;
}

Tensor<float> frames_prefix(const Tensor<float>& layers, std::int64_t frames) {
  return layers.dim(2) == frames ? layers : ops::slice(layers, 2, 0, frames);
}

std::unique_ptr<TeacherSource> require_teacher(std::unique_ptr<TeacherSource> given, const TeacherOptions& opts,
                                               const data::MixManifest& manifest, const LoopOptions& loop,
                                               const std::string& who) {
  if (!given) given = make_teacher(opts, manifest, loop.stft);
  if (!given)
    throw ConfigError("teacher.source: " + who +
                      " needs teacher embeddings; set teacher.source to synthetic or file");
  if (!given->differentiable() && loop.mixing != data::MixingMode::Static)
    throw ConfigError("data.mixing: precomputed teacher embeddings (" + given->name() +
                      ") only match static mixtures; set data.mixing = static");
  return given;
}

}  // namespace

std::string to_string(Mode m) {
  for (const auto& i : kModeNames)
    if (i.mode == m) return i.name;
  throw Error("unknown mode");
}

Mode parse_mode(const std::string& s) {
  for (const auto& i : kModeNames)
    if (s == i.name) return i.mode;
  std::string all;
  for (const auto& i : kModeNames) all += std::string(all.empty() ? "" : ", ") + i.name;
  throw ConfigError("train.mode: unknown mode '" + s + "' (expected one of " + all + ")");
}

bool needs_teacher(Mode m) { return m != Mode::Baseline; }
bool uses_layer_weights(Mode m) {
  return m == Mode::ConcatWs || m == Mode::DistillEmbedWs || m == Mode::DistillAdvWs || m == Mode::DistillTripletWs;
}
bool is_concat(Mode m) { return m == Mode::Concat || m == Mode::ConcatWs; }
bool is_distillation(Mode m) { return m != Mode::Baseline && !is_concat(m); }
bool teacher_free_inference(Mode m) { return !is_concat(m); }

std::string to_string(EncoderLoss l) {
  switch (l) {
    case EncoderLoss::L1: return "l1";
    case EncoderLoss::L2: return "l2";
    case EncoderLoss::Cosine: return "cosine";
  }
  return "?";
}

std::string to_string(DecoderInput d) { return d == DecoderInput::Teacher ? "teacher" : "frozen_encoder"; }

EncoderLoss parse_encoder_loss(const std::string& s) {
  if (s == "l1") return EncoderLoss::L1;
  if (s == "l2") return EncoderLoss::L2;
  if (s == "cosine") return EncoderLoss::Cosine;
  throw ConfigError("pretrain.loss: unknown loss '" + s + "' (expected l1, l2 or cosine)");
}

DecoderInput parse_decoder_input(const std::string& s) {
  if (s == "teacher") return DecoderInput::Teacher;
  if (s == "frozen_encoder") return DecoderInput::FrozenEncoder;
  throw ConfigError("pretrain.input: unknown input '" + s + "' (expected teacher or frozen_encoder)");
}

std::unique_ptr<TeacherSource> make_teacher(const TeacherOptions& opts, const data::MixManifest& manifest,
                                            const dsp::StftConfig& stft) {
  if (opts.source == "none") return nullptr;
  if (opts.source == "synthetic") {
    if (opts.layers < 1) throw ConfigError("teacher.layers: must be >= 1");
    if (opts.dim < 1) throw ConfigError("teacher.dim: must be >= 1");
    return std::make_unique<teacher::SyntheticSource>(
        teacher::SyntheticTeacher(opts.seed, opts.layers, opts.dim, stft.bins()));
  }
  if (opts.source == "file") {
    if (opts.dir.empty()) throw ConfigError("teacher.dir: required when teacher.source = file");
    return std::make_unique<teacher::FileSource>(opts.dir, manifest, stft);
  }
  throw ConfigError("teacher.source: unknown source '" + opts.source + "' (expected none, synthetic or file)");
}

void TrainConfig::validate() const {
  validate_loop(loop);
  weights.validate();
}

double StepRecord::get(const std::string& key) const {
  for (const auto& [k, v] : values)
    if (k == key) return v;
  throw Error("metric log: step " + std::to_string(step) + " has no value '" + key + "'");
}

std::string StepRecord::line() const {
  std::string out = std::to_string(step);
  for (const auto& [k, v] : values) out += "\t" + k + "=" + fmt(v);
  return out;
}

std::pair<double, double> smoothed_endpoints(const std::vector<StepRecord>& log, const std::string& key,
                                             std::size_t window) {
  if (log.empty()) throw Error("smoothed_endpoints: empty log");
  const std::size_t w = std::max<std::size_t>(1, std::min(window, log.size() / 10));
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < w; ++i) {
    head += log[i].get(key);
    tail += log[log.size() - 1 - i].get(key);
  }
  return {head / w, tail / w};
}

double PretrainResult::reduction() const { return (initial_loss - final_loss) / std::abs(initial_loss); }

// ---- enhancement training ----------------------------------------------------

struct Trainer::Impl {
  data::MixIterator iter;
  std::unique_ptr<TeacherSource> teacher;
  std::optional<losses::Linear<float>> proj;
  std::unique_ptr<losses::Discriminator<float>> disc;
  std::optional<teacher::LayerWeights> ws;
  std::vector<Tensor<float>> gen_params, disc_params;
  std::unique_ptr<Adam<float>> gen_opt, disc_opt;
  RunFiles files;

  Impl(data::MixManifest manifest, const LoopOptions& loop, data::Loader loader)
      : iter(std::move(manifest), iterator_options(loop), std::move(loader)), files(loop.run_dir) {}

  Tensor<float> view(const Tensor<float>& layers) const {
    return ws ? teacher::weighted_sum(layers, ws->logits) : teacher::last_layer(layers);
  }
};

Trainer::Trainer(TrainConfig cfg, model::GcrnConfig model_cfg, data::MixManifest manifest, data::Loader loader,
                 std::unique_ptr<TeacherSource> teacher)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const Mode mode = cfg_.mode;
  if (needs_teacher(mode))
    teacher = require_teacher(std::move(teacher), cfg_.teacher, manifest, cfg_.loop, "mode " + to_string(mode));
  else
    teacher.reset();
  if (mode == Mode::DistillOutput && !teacher->differentiable())
    throw ConfigError("teacher.source: distill_output backpropagates through the teacher, but " + teacher->name() +
                      " provides precomputed embeddings only");

  model_cfg.conditioning = is_concat(mode) ? model::Conditioning::Concat : model::Conditioning::None;
  if (is_concat(mode)) model_cfg.condition_dim = teacher->dim();
  model_ = std::make_unique<model::Gcrn<float>>(model_cfg, derive_seed(cfg_.loop.seed, kModelSeed));

  impl_ = std::make_unique<Impl>(std::move(manifest), cfg_.loop, std::move(loader));
  impl_->teacher = std::move(teacher);
  auto& im = *impl_;
  im.gen_params = model_->parameters();
  if (uses_layer_weights(mode)) im.ws.emplace(im.teacher->layers());
  if (is_distillation(mode) && mode != Mode::DistillOutput) {
    Rng rng(derive_seed(cfg_.loop.seed, kProjSeed));
    im.proj.emplace(model_cfg.bottleneck_dim(), im.teacher->dim(), rng);
    for (auto& p : im.proj->parameters()) im.gen_params.push_back(p);
  }
  if (mode == Mode::DistillAdv || mode == Mode::DistillAdvWs) {
    Rng rng(derive_seed(cfg_.loop.seed, kDiscSeed));
    im.disc = std::make_unique<losses::Discriminator<float>>(im.teacher->dim(), rng);
    im.disc_params = im.disc->parameters();
    // The layer weights only shape the real side, which the discriminator sees.
    if (im.ws) im.disc_params.push_back(im.ws->logits);
  } else if (im.ws) {
    im.gen_params.push_back(im.ws->logits);
  }
  AdamOptions adam;
  adam.lr = cfg_.loop.lr;
  im.gen_opt = std::make_unique<Adam<float>>(im.gen_params, adam);
  if (im.disc) im.disc_opt = std::make_unique<Adam<float>>(im.disc_params, adam);
}

Trainer::~Trainer() = default;

std::vector<Tensor<float>> Trainer::generator_parameters() const { return impl_->gen_params; }
std::vector<Tensor<float>> Trainer::discriminator_parameters() const { return impl_->disc_params; }

std::vector<double> Trainer::layer_weights() const {
  return impl_->ws ? impl_->ws->weights() : std::vector<double>{};
}

std::vector<NamedTensor> Trainer::aux_state() const {
  std::vector<NamedTensor> out;
  if (impl_->proj) append(out, linear_state("aux.proj", *impl_->proj));
  if (impl_->disc) append(out, impl_->disc->state_dict("aux.disc."));
  if (impl_->ws) append(out, named("aux.layer_logits", impl_->ws->logits));
  return out;
}

StepRecord Trainer::step() {
  using namespace selab::ops;
  auto& im = *impl_;
  const Mode mode = cfg_.mode;
  const auto& w = cfg_.weights;
  const auto& stft = cfg_.loop.stft;
  StepRecord rec;
  rec.step = ++step_;

  data::Batch batch = im.iter.next_cycling();
  Tensor<float> tc, tn;
  std::int64_t teacher_frames = 0;
  if (im.teacher && mode != Mode::DistillOutput) {
    tc = im.teacher->clean(batch);
    tn = im.teacher->noisy(batch);
    teacher_frames = std::min(tc.dim(2), tn.dim(2));
  }
  Aligned a = align(batch, teacher_frames, stft);
  if (tc.defined()) {
    tc = frames_prefix(tc, a.frames);
    tn = frames_prefix(tn, a.frames);
  }

  Tensor<float> est_spec, features;
  if (is_concat(mode)) {
    est_spec = model_->forward(a.spec, im.view(tn));
  } else {
    auto enc = model_->encode(a.spec);
    features = enc.features;
    est_spec = model_->decode(enc.features, enc.skips);
  }
  auto est = dsp::istft_tensor(est_spec, stft);
  auto s = losses::sisdr(est, a.clean_wave);
  Tensor<float> total = neg(mean(s));
  rec.values.emplace_back("sisdr", double(mean(s).item()));

  std::optional<losses::AdversarialLoss<float>> adv;
  double aux_value = 0;
  auto add_aux = [&](const Tensor<float>& aux, double lambda) {
    aux_value = aux.item();
    total = add(total, mul_scalar(aux, float(lambda)));
  };
  switch (mode) {
    case Mode::DistillEmbed:
    case Mode::DistillEmbedWs:
      add_aux(losses::distill_embed(features, im.view(tc), *im.proj), w.embed);
      break;
    case Mode::DistillTriplet:
    case Mode::DistillTripletWs:
      add_aux(losses::triplet((*im.proj)(features), im.view(tc), im.view(tn), w.margin), w.triplet);
      break;
    case Mode::DistillAdv:
    case Mode::DistillAdvWs:
      adv = losses::adversarial((*im.proj)(features), im.view(tc), *im.disc);
      add_aux(adv->generator, w.adversarial);
      break;
    case Mode::DistillOutput: {
      losses::EmbeddingFn<float> fn;
      fn.differentiable = im.teacher->differentiable();
      fn.name = im.teacher->name();
      auto* src = im.teacher.get();
      fn.fn = [src, &stft](const Tensor<float>& wave) {
        return teacher::last_layer(src->embed_spec(dsp::stft_tensor(wave, stft)));
      };
      add_aux(losses::distill_output(est, a.clean_wave, fn), w.output);
      break;
    }
    default:
      break;
  }
  rec.values.insert(rec.values.begin(), {"loss", double(total.item())});
  rec.values.emplace_back("aux", aux_value);

  backward(total);
  const double gnorm = clip_grad_norm(im.gen_params, cfg_.loop.clip_norm);
  rec.values.emplace_back("grad_norm", gnorm);
  if (adv) rec.values.emplace_back("adv_disc", double(adv->discriminator.item()));
  guard_finite(rec, *model_, aux_state(), im.files);

  for (auto& p : im.disc_params) p.clear_grad();
  im.gen_opt->step();
  if (hook_) hook_("generator");

  if (adv) {
    backward(adv->discriminator);
    clip_grad_norm(im.disc_params, cfg_.loop.clip_norm);
    im.disc_opt->step();
    if (hook_) hook_("discriminator");
  }

  im.files.log(rec);
  if (cfg_.loop.on_step) cfg_.loop.on_step(rec);
  if (cfg_.loop.checkpoint_every > 0 && step_ % cfg_.loop.checkpoint_every == 0)
    im.files.save("step_" + std::to_string(step_) + ".gck", *model_, aux_state());
  return rec;
}

RunResult Trainer::run() {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult out;
  while (step_ < cfg_.loop.steps) out.log.push_back(step());
  impl_->files.save("model.gck", *model_, aux_state());
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.layer_weights = layer_weights();
  return out;
}

RunResult train(const TrainConfig& cfg, const model::GcrnConfig& model_cfg, const data::MixManifest& manifest,
                const data::Loader& loader) {
  Trainer t(cfg, model_cfg, manifest, loader);
  return t.run();
}

// ---- pre-training ------------------------------------------------------------

namespace {

using StepFn = std::function<StepRecord(const data::Batch&)>;

PretrainResult run_pretrain(const LoopOptions& loop, std::unique_ptr<model::Gcrn<float>> m,
                            const data::MixManifest& manifest, const data::Loader& loader,
                            std::vector<Tensor<float>> params, const std::function<std::vector<NamedTensor>()>& aux,
                            const StepFn& compute) {
  const auto t0 = std::chrono::steady_clock::now();
  data::MixIterator iter(manifest, iterator_options(loop), loader);
  RunFiles files(loop.run_dir);
  AdamOptions adam;
  adam.lr = loop.lr;
  Adam<float> opt(params, adam);
  PretrainResult out;
  for (std::int64_t step = 1; step <= loop.steps; ++step) {
    data::Batch batch = iter.next_cycling();
    StepRecord rec = compute(batch);
    rec.step = step;
    rec.values.emplace_back("grad_norm", clip_grad_norm(params, loop.clip_norm));
    guard_finite(rec, *m, aux(), files);
    opt.step();
    files.log(rec);
    if (loop.on_step) loop.on_step(rec);
    if (loop.checkpoint_every > 0 && step % loop.checkpoint_every == 0)
      files.save("step_" + std::to_string(step) + ".gck", *m, aux());
    out.run.log.push_back(std::move(rec));
  }
  files.save("model.gck", *m, aux());
  out.run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::tie(out.initial_loss, out.final_loss) = smoothed_endpoints(out.run.log, "loss");
  out.model = std::move(m);
  return out;
}

}  // namespace

PretrainResult pretrain_encoder(const PretrainConfig& cfg, const model::GcrnConfig& model_cfg,
                                const data::MixManifest& manifest, const data::Loader& loader,
                                std::unique_ptr<TeacherSource> teacher) {
  validate_loop(cfg.loop);
  auto src = std::shared_ptr<TeacherSource>(
      require_teacher(std::move(teacher), cfg.teacher, manifest, cfg.loop, "encoder pre-training"));
  model::GcrnConfig mc = model_cfg;
  mc.conditioning = model::Conditioning::None;
  auto m = std::make_unique<model::Gcrn<float>>(mc, derive_seed(cfg.loop.seed, kModelSeed));
  Rng rng(derive_seed(cfg.loop.seed, kProjSeed));
  auto proj = std::make_shared<losses::Linear<float>>(mc.bottleneck_dim(), src->dim(), rng);
  auto params = m->encoder_parameters();
  for (auto& p : proj->parameters()) params.push_back(p);
  const auto* model = m.get();
  const EncoderLoss kind = cfg.encoder_loss;
  const auto stft = cfg.loop.stft;
  return run_pretrain(
      cfg.loop, std::move(m), manifest, loader, params, [proj] { return linear_state("aux.proj", *proj); },
      [=](const data::Batch& batch) {
        auto tc = src->clean(batch);
        Aligned a = align(batch, tc.dim(2), stft);
        auto target = teacher::last_layer(frames_prefix(tc, a.frames));
        auto pred = (*proj)(model->encode(a.spec).features);
        Tensor<float> loss = kind == EncoderLoss::L1   ? losses::mean_l1(pred, target)
                             : kind == EncoderLoss::L2 ? losses::mean_l2(pred, target)
                                                       : losses::cosine_distance(pred, target);
        backward(loss);
        StepRecord rec;
        rec.values.emplace_back("loss", double(loss.item()));
        return rec;
      });
}

PretrainResult pretrain_decoder(const PretrainConfig& cfg, const model::GcrnConfig& model_cfg,
                                const data::MixManifest& manifest, const data::Loader& loader,
                                std::unique_ptr<TeacherSource> teacher) {
  validate_loop(cfg.loop);
  model::GcrnConfig mc = model_cfg;
  mc.conditioning = model::Conditioning::None;
  auto m = std::make_unique<model::Gcrn<float>>(mc, derive_seed(cfg.loop.seed, kModelSeed));
  const auto* model = m.get();
  const auto stft = cfg.loop.stft;
  auto params = m->decoder_parameters();

  if (cfg.decoder_input == DecoderInput::FrozenEncoder) {
    if (cfg.encoder_checkpoint.empty())
      throw ConfigError("pretrain.encoder_checkpoint: required when pretrain.input = frozen_encoder");
    load_part(*m, load_checkpoint(cfg.encoder_checkpoint), "encoder.", cfg.encoder_checkpoint);
    return run_pretrain(cfg.loop, std::move(m), manifest, loader, params, [] { return std::vector<NamedTensor>{}; },
                        [=](const data::Batch& batch) {
                          Aligned a = align(batch, 0, stft);
                          model::Encoded<float> enc;
                          {
                            NoGradGuard frozen;
                            enc = model->encode(a.spec);
                          }
                          auto est = dsp::istft_tensor(model->decode(enc.features, enc.skips), stft);
                          auto loss = losses::sisdr_loss(est, a.clean_wave);
                          backward(loss);
                          StepRecord rec;
                          rec.values.emplace_back("loss", double(loss.item()));
                          return rec;
                        });
  }

  auto src = std::shared_ptr<TeacherSource>(
      require_teacher(std::move(teacher), cfg.teacher, manifest, cfg.loop, "decoder pre-training from teacher input"));
  Rng rng(derive_seed(cfg.loop.seed, kAdapterSeed));
  auto adapter = std::make_shared<losses::Linear<float>>(src->dim(), mc.bottleneck_dim(), rng);
  for (auto& p : adapter->parameters()) params.push_back(p);
  return run_pretrain(
      cfg.loop, std::move(m), manifest, loader, params, [adapter] { return linear_state("aux.adapter", *adapter); },
      [=](const data::Batch& batch) {
        auto tc = src->clean(batch);
        Aligned a = align(batch, tc.dim(2), stft);
        auto features = (*adapter)(teacher::last_layer(frames_prefix(tc, a.frames)));
        auto est = dsp::istft_tensor(model->decode(features, {}), stft);
        auto loss = losses::sisdr_loss(est, a.clean_wave);
        backward(loss);
        StepRecord rec;
        rec.values.emplace_back("loss", double(loss.item()));
        return rec;
      });
}

// ---- fine-tuning -------------------------------------------------------------

void load_part(model::Gcrn<float>& model, const std::vector<NamedTensor>& tensors, const std::string& prefix,
               const std::string& source) {
  try {
    model.load_matching(tensors, prefix);
  } catch (const FormatError& e) {
    throw FormatError(source + ": " + e.what());
  }
}

std::unique_ptr<Trainer> make_finetuner(const TrainConfig& cfg, const model::GcrnConfig& model_cfg,
                                        const std::string& encoder_ckpt, const std::string& decoder_ckpt,
                                        const data::MixManifest& manifest, const data::Loader& loader) {
  if (cfg.mode != Mode::Baseline)
    throw ConfigError("train.mode: fine-tuning uses the baseline objective, got " + to_string(cfg.mode));
  auto enc = load_checkpoint(encoder_ckpt);
  auto dec = load_checkpoint(decoder_ckpt);
  auto t = std::make_unique<Trainer>(cfg, model_cfg, manifest, loader);
  load_part(t->model(), enc, "encoder.", encoder_ckpt);
  load_part(t->model(), dec, "decoder.", decoder_ckpt);
  return t;
}

}  // namespace selab::train
