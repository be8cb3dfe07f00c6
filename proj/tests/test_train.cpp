#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "eformer/ablation.hpp"
#include "eformer/checkpoint.hpp"
#include "eformer/config.hpp"
#include "eformer/train.hpp"
#include "oracles.hpp"

using namespace eformer;
using oracle::values;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg = ModelConfig::desk();
  cfg.encoder.channels = {8, 8, 16, 16};
  cfg.decoder.channels = 16;
  cfg.decoder.heads = 2;
  cfg.decoder.blocks = 1;
  cfg.res_h = cfg.res_w = 32;
  cfg.decoder.pe_grid = EFormer::token_grid(32, 32);
  return cfg;
}

train::TrainConfig tiny_train() {
  train::TrainConfig t;
  t.batch = 2;
  t.epochs = 2;
  t.lr0 = 1e-3;
  t.seed = 3;
  return t;
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("eformer_train_" + name);
  fs::remove_all(d);
  return d;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

data::Batch probe_batch() {
  const auto src = data::synth_dataset(2, 32, 5);
  data::BatchLoader loader(src, {.height = 32, .width = 32, .batch = 2, .seed = 1});
  loader.start_epoch(0);
  return *loader.next();
}

}  // namespace

TEST_CASE("bce loss values") {
  const Tensor half = Tensor::full({1, 1, 2, 2}, 0.5);
  CHECK(std::abs(train::bce_loss(half, half).item() - std::numbers::ln2) < 1e-9);
  CHECK(std::abs(train::bce_loss(half, Tensor::zeros({1, 1, 2, 2})).item() - std::numbers::ln2) < 1e-9);
  CHECK(train::bce_loss(Tensor::full({4}, 1.0 - 1e-7), Tensor::full({4}, 1.0)).item() < 1e-6);
  CHECK(std::isfinite(train::bce_loss(Tensor::zeros({4}), Tensor::full({4}, 1.0)).item()));
  for (double g : {0.1, 0.5, 0.9}) {
    const double entropy = -(g * std::log(g) + (1 - g) * std::log(1 - g));
    CHECK(train::bce_loss(Tensor::full({3}, g), Tensor::full({3}, g)).item() == doctest::Approx(entropy).epsilon(1e-12));
    const Tensor m = Tensor::full({3}, g, true);
    train::bce_loss(m, Tensor::full({3}, g)).backward();
    for (double d : m.grad()) CHECK(std::abs(d) < 1e-6);
  }
  CHECK_THROWS_AS(train::bce_loss(Tensor::zeros({3}), Tensor::zeros({4})), ShapeError);
}

TEST_CASE("learning-rate schedule") {
  train::TrainConfig cfg;
  CHECK(train::lr_at(0, cfg) == 1e-4);
  CHECK(train::lr_at(4, cfg) == 1e-4);
  CHECK(train::lr_at(5, cfg) == 8e-5);
  CHECK(train::lr_at(20, cfg) == 4.096e-5);
  for (std::size_t e = 0; e < 40; ++e) CHECK(train::lr_at(e + 1, cfg) <= train::lr_at(e, cfg));
}

TEST_CASE("train config validation") {
  train::TrainConfig cfg;
  cfg.decay = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.decay_every = 0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.lr0 = -1;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("weight decay skips norm affine and position tables") {
  CHECK_FALSE(train::uses_weight_decay("decoder/block0/ca/ln_hr/gamma"));
  CHECK_FALSE(train::uses_weight_decay("encoder/stage1/norm/beta"));
  CHECK_FALSE(train::uses_weight_decay("decoder/block1/pe"));
  CHECK(train::uses_weight_decay("decoder/block0/ca/attn/wq"));
  CHECK(train::uses_weight_decay("head/conv1/weight"));
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  EFormer model(tiny_model(), 1);
  std::map<std::string, std::vector<double>> before;
  for (const auto& [n, t] : model.params()) before[n] = values(t);
  train::AdamW opt(tiny_train());
  train::train_step(model, probe_batch(), opt, 0.0);
  for (const auto& [n, t] : model.params()) CHECK(values(t) == before[n]);
}

TEST_CASE("AdamW descends a scalar quadratic monotonically") {
  ParamStore store;
  const Tensor x = store.add("x", Tensor::from({1}, {3.0}));
  train::TrainConfig cfg;
  cfg.weight_decay = 0.0;
  train::AdamW opt(cfg);
  double prev = INFINITY;
  for (int s = 0; s < 50; ++s) {
    store.zero_grad();
    const Tensor loss = sum(mul(add_scalar(x, -1.0), add_scalar(x, -1.0)));
    const double l = loss.item();
    CHECK(l < prev);
    prev = l;
    loss.backward();
    opt.step(store, 0.05);
  }
  CHECK(prev < 4.0);
  CHECK(opt.state().steps == 50);
}

TEST_CASE("non-finite gradients are reported by parameter name") {
  ParamStore store;
  store.add("a", Tensor::zeros({2}));
  const Tensor b = store.add("b", Tensor::from({2}, {1.0, NAN}));
  try {
    train::check_finite(store, "after step 3");
    FAIL("expected TrainingError");
  } catch (const train::TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("b") != std::string::npos);
    CHECK(msg.find("after step 3") != std::string::npos);
  }
}

TEST_CASE("training is deterministic given the seed") {
  const auto src = data::synth_dataset(4, 32, 7);
  auto run = [&] {
    EFormer model(tiny_model(), 11);
    train::TrainState state;
    train::FitOptions fo{.height = 32, .width = 32};
    const auto res = train::fit(model, state, tiny_train(), src, nullptr, fo);
    std::vector<double> losses;
    for (const auto& r : res.log) losses.push_back(r.loss);
    return losses;
  };
  const auto a = run();
  CHECK(a.size() == 2);
  CHECK(a == run());
}

TEST_CASE("zero epochs writes only the initial checkpoint") {
  const auto src = data::synth_dataset(2, 32, 7);
  EFormer model(tiny_model(), 1);
  train::TrainState state;
  auto cfg = tiny_train();
  cfg.epochs = 0;
  const fs::path dir = scratch("zero");
  const auto res = train::fit(model, state, cfg, src, nullptr, {.out_dir = dir, .height = 32, .width = 32});
  CHECK(res.log.empty());
  REQUIRE(res.checkpoints.size() == 1);
  const auto ck = train::Checkpoint::load(res.checkpoints[0]);
  CHECK(ck.state.epoch == 0);
  for (const auto& [n, t] : model.params()) CHECK(values(ck.params.get(n)) == values(t));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  EFormer model(tiny_model(), 4);
  train::TrainConfig tc = tiny_train();
  train::AdamW opt(tc);
  const auto batch = probe_batch();
  train::train_step(model, batch, opt, 1e-3);
  const train::TrainState state{1, opt.state()};
  const fs::path dir = scratch("ckpt");
  fs::create_directories(dir);
  train::make_checkpoint(model, tc, state).save(dir / "a.ckpt");
  const auto loaded = train::Checkpoint::load(dir / "a.ckpt");
  loaded.save(dir / "b.ckpt");
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));
  CHECK(loaded.state.epoch == 1);
  CHECK(loaded.state.opt.steps == 1);
  CHECK(loaded.state.opt.m == opt.state().m);

  const EFormer restored = train::restore_model(loaded);
  NoGradGuard g;
  CHECK(values(restored.forward(batch.image).matte) == values(model.forward(batch.image).matte));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path dir = scratch("corrupt");
  fs::create_directories(dir);
  std::ofstream(dir / "x.ckpt") << "NOTACHECKPOINT";
  CHECK_THROWS_AS(train::Checkpoint::load(dir / "x.ckpt"), train::CheckpointError);
  EFormer model(tiny_model(), 4);
  std::string bytes = train::make_checkpoint(model, tiny_train(), {}).serialize();
  bytes.resize(bytes.size() - 9);
  CHECK_THROWS_AS(train::Checkpoint::deserialize(bytes), train::CheckpointError);
}

TEST_CASE("resume continues the schedule and matches an uninterrupted run") {
  const auto src = data::synth_dataset(4, 32, 7);
  train::TrainConfig tc = tiny_train();
  tc.epochs = 4;
  tc.decay_every = 2;
  tc.decay = 0.5;
  train::FitOptions fo{.height = 32, .width = 32};

  EFormer straight(tiny_model(), 9);
  train::TrainState s1;
  const auto full = train::fit(straight, s1, tc, src, nullptr, fo);

  const fs::path dir = scratch("resume");
  EFormer first(tiny_model(), 9);
  train::TrainState s2;
  train::TrainConfig half = tc;
  half.epochs = 2;
  fo.out_dir = dir;
  const auto part = train::fit(first, s2, half, src, nullptr, fo);
  const auto ck = train::Checkpoint::load(part.checkpoints.back());
  CHECK(ck.state.epoch == 2);
  EFormer resumed = train::restore_model(ck);
  train::TrainState s3 = ck.state;
  fo.out_dir.reset();
  const auto rest = train::fit(resumed, s3, tc, src, nullptr, fo);
  REQUIRE(rest.log.size() == 2);
  CHECK(rest.log[0].epoch == 2);
  CHECK(rest.log[0].lr == train::lr_at(2, tc));
  CHECK(rest.log[0].loss == full.log[2].loss);
  CHECK(rest.log[1].loss == full.log[3].loss);
  for (const auto& [n, t] : straight.params()) CHECK(values(resumed.params().get(n)) == values(t));
}

TEST_CASE("layered run config") {
  const KeyValues file = config::parse("[train]\nepochs = 3\n[model]\nablation = ca_only\n");
  const auto rc = config::RunConfig::resolve({file, {{"train.epochs", "7"}}});
  CHECK(rc.train.epochs == 7);
  CHECK(rc.model.decoder.ablation == decoder::Ablation::CaOnly);
  CHECK(rc.model.decoder.channels == 64);
  CHECK_THROWS_AS(config::RunConfig::resolve({{{"train.nope", "1"}}}), config::ConfigError);
  CHECK_THROWS_AS(config::RunConfig::resolve({{{"train.epochs", "x"}}}), config::ConfigError);
  const auto again = config::RunConfig::resolve({config::parse(rc.to_text())});
  CHECK(again.to_kv() == rc.to_kv());
}

TEST_CASE("ablation table layout and trend flag") {
  train::AblationTable t;
  auto row = [](std::string section, decoder::Ablation a, int hr, int lr, double mad) {
    train::AblationRow r;
    r.section = std::move(section);
    r.ablation = a;
    r.hr_level = hr;
    r.lr_level = lr;
    r.label = decoder::ablation_name(a);
    r.report.mad = mad;
    return r;
  };
  t.rows = {row("attention", decoder::Ablation::CaOnly, 8, 16, 10), row("attention", decoder::Ablation::SaOnly, 8, 16, 12),
            row("attention", decoder::Ablation::Full, 8, 16, 9)};
  CHECK(t.attention_trend_holds());
  CHECK(t.to_text().find("holds") != std::string::npos);
  t.rows[2].report.mad = 11;
  CHECK_FALSE(t.attention_trend_holds());
  CHECK(t.to_text().find("INVERTED") != std::string::npos);
}

TEST_CASE("ablation matrix rows are distinct and wired") {
  const auto src = data::synth_dataset(4, 32, 7);
  const auto eval = data::compose_all(src, 32, 32, 0);
  ModelConfig base = tiny_model();
  train::TrainConfig tc = tiny_train();
  const auto table = train::run_ablation_matrix(base, tc, src, eval, {.steps = 1, .height = 32, .width = 32});
  REQUIRE(table.rows.size() == 6);
  for (const std::string section : {"attention", "levels"}) {
    std::set<std::string> hashes;
    std::size_t n = 0;
    for (const auto& r : table.rows) {
      if (r.section != section) continue;
      hashes.insert(r.config_hash);
      ++n;
      CHECK(r.report.count == eval.size());
    }
    CHECK(n == 3);
    CHECK(hashes.size() == 3);
  }
  const auto& full = table.find("attention", decoder::Ablation::Full, 8, 16);
  CHECK(full.has_cross_attention);
  CHECK(full.has_self_attention);
  CHECK_FALSE(table.find("attention", decoder::Ablation::CaOnly, 8, 16).has_self_attention);
  CHECK_FALSE(table.find("attention", decoder::Ablation::SaOnly, 8, 16).has_cross_attention);
}
