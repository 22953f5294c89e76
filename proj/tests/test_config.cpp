#include <gtest/gtest.h>

#include "selab/config.hpp"
#include "selab/error.hpp"

using namespace selab;

namespace {

std::string config_error(const std::string& text) {
  try {
    RunConfig::parse(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(RunConfig, DefaultsAreMaterialized) {
  auto c = RunConfig::parse("");
  const auto kv = c.to_kv();
  for (const char* key : {"stft.hop", "model.channels", "data.mixing", "train.mode", "train.seed",
                          "losses.lambda_embed", "teacher.source", "pretrain.loss", "eval.include_input"})
    EXPECT_TRUE(kv.has(key)) << key;
  EXPECT_EQ(kv.get("train.mode"), "baseline");
  EXPECT_EQ(kv.get("stft.window_len"), "400");
  EXPECT_EQ(kv.get("stft.hop"), "320");
}

TEST(RunConfig, RoundTripIsExact) {
  auto c = RunConfig::parse(
      "model.preset = tiny\n"
      "train.mode = distill_triplet_ws\n"
      "train.lr = 0.003\n"
      "train.seed = 17\n"
      "data.mixing = static\n"
      "teacher.source = synthetic\n"
      "teacher.dim = 16\n"
      "losses.margin = 50\n"
      "pretrain.input = frozen_encoder\n");
  const auto text = c.str();
  auto again = RunConfig::parse(text);
  EXPECT_EQ(again.str(), text);
  EXPECT_EQ(again.train.mode, train::Mode::DistillTripletWs);
  EXPECT_EQ(again.train.seed, 17u);
  EXPECT_EQ(again.train.lr, 0.003);
  EXPECT_EQ(again.losses.margin, 50);
  EXPECT_EQ(again.model.channels, model::GcrnConfig::tiny_preset().channels);
  EXPECT_EQ(again.pretrain.input, train::DecoderInput::FrozenEncoder);
}

TEST(RunConfig, ErrorsNameTheField) {
  EXPECT_NE(config_error("train.bogus = 1\n").find("train.bogus"), std::string::npos);
  EXPECT_NE(config_error("nosection = 1\n").find("nosection"), std::string::npos);
  EXPECT_NE(config_error("widgets.size = 1\n").find("widgets.size"), std::string::npos);
  EXPECT_NE(config_error("train.steps = many\n").find("train.steps"), std::string::npos);
  EXPECT_NE(config_error("train.steps = 0\n").find("train.steps"), std::string::npos);
  EXPECT_NE(config_error("train.mode = fancy\n").find("train.mode"), std::string::npos);
  EXPECT_NE(config_error("data.mixing = sometimes\n").find("data.mixing"), std::string::npos);
  EXPECT_NE(config_error("teacher.source = oracle\n").find("teacher.source"), std::string::npos);
  EXPECT_NE(config_error("teacher.source = file\n").find("teacher.dir"), std::string::npos);
  EXPECT_NE(config_error("losses.lambda_embed = -1\n").find("losses.lambda_embed"), std::string::npos);
  EXPECT_NE(config_error("stft.fft_size = 1024\n").find("model.input_bins"), std::string::npos);
  EXPECT_NE(config_error("model.lstm_groups = 0\n").find("model."), std::string::npos);
  EXPECT_NE(config_error("stft.window = kaiser\n").find("stft.window"), std::string::npos);
  EXPECT_NE(config_error("train.seed = -3\n").find("train.seed"), std::string::npos);
}

TEST(RunConfig, OverridesApplyInOrderOverTheFile) {
  auto c = RunConfig::load("", {{"train.steps", "5"}, {"train.steps", "7"}, {"train.mode", "concat"}});
  EXPECT_EQ(c.train.steps, 7);
  EXPECT_EQ(c.train.mode, train::Mode::Concat);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.cfg", {}), IoError);
}

TEST(RunConfig, LoopOptionsCarryEverySection) {
  auto c = RunConfig::parse("stft.envelope_floor = 0.05\ndata.peak = 0.5\ntrain.workers = 3\npretrain.steps = 9\n");
  auto t = c.train_config();
  EXPECT_EQ(t.loop.stft.envelope_floor, 0.05);
  EXPECT_EQ(t.loop.peak, 0.5);
  EXPECT_EQ(t.loop.workers, 3u);
  auto p = c.pretrain_config();
  EXPECT_EQ(p.loop.steps, 9);
  EXPECT_EQ(p.loop.workers, 3u);
}
