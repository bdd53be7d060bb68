// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "moediff/buckets.hpp"
#include "moediff/errors.hpp"
#include "moediff/model.hpp"
#include "moediff/optimizer.hpp"
#include "moediff/scene.hpp"
#include "moediff/trainer.hpp"

using namespace moediff;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.blocks = 1;
  cfg.d = 8;
  cfg.d_y = 8;
  cfg.n_y = 4;
  cfg.space_experts = 1;
  cfg.time_experts = 1;
  cfg.heads = 1;
  cfg.T = 10;
  cfg.t_c = 5;
  cfg.patch = 4;
  cfg.channels = 2;
  cfg.d_t = 8;
  cfg.expert_hidden_mult = 1;
  cfg.gate_hidden = 4;
  cfg.max_height = 8;
  cfg.max_width = 8;
  cfg.edge_layers = 2;
  cfg.edge_channels = 2;
  cfg.edge_kernel = 3;
  return cfg;
}

std::vector<int> tiny_caption(const ModelConfig& cfg) {
  Vocabulary vocab;
  std::vector<int> caption(static_cast<std::size_t>(cfg.n_y), vocab.pad_id());
  caption[0] = vocab.summary_id();
  caption[1] = vocab.id_of("red");
  caption[2] = vocab.id_of("circle");
  return caption;
}

}  // namespace

TEST_CASE("forward produces a noise estimate of the input shape") {
  const ModelConfig cfg = tiny_config();
  Model model(cfg, 1234);
  RandomStream rng(5);
  Tensor x({2, 8, 8});
  rng.fill_normal(x.data());

  const ForwardResult r = model.forward(x, 3, tiny_caption(cfg), false, rng);
  CHECK(r.eps_hat.shape() == std::vector<int>{2, 8, 8});
  CHECK(r.h_f == 2);
  CHECK(r.w_f == 2);
  REQUIRE(r.maps.size() == 1);
  CHECK(r.maps[0].map.shape() == std::vector<int>{4, 4});
  for (double v : r.eps_hat.data()) CHECK(std::isfinite(v));

  // Same seed, same input: identical output. Different model seed: different.
  Model same(cfg, 1234);
  RandomStream rng2(5);
  Tensor x2({2, 8, 8});
  rng2.fill_normal(x2.data());
  const ForwardResult r2 = same.forward(x2, 3, tiny_caption(cfg), false, rng2);
  for (std::size_t i = 0; i < r.eps_hat.size(); ++i) {
    CHECK(r.eps_hat.data()[i] == r2.eps_hat.data()[i]);
  }
  Model other(cfg, 4321);
  RandomStream rng3(5);
  const ForwardResult r3 = other.forward(x, 3, tiny_caption(cfg), false, rng3);
  bool differs = false;
  for (std::size_t i = 0; i < r.eps_hat.size() && !differs; ++i) {
    differs = r.eps_hat.data()[i] != r3.eps_hat.data()[i];
  }
  CHECK(differs);
}

TEST_CASE("forward rejects malformed inputs") {
  const ModelConfig cfg = tiny_config();
  Model model(cfg, 7);
  RandomStream rng(1);
  Tensor ok({2, 8, 8}, 0.1);
  const std::vector<int> caption = tiny_caption(cfg);

  CHECK_THROWS_AS(model.forward(Tensor({3, 8, 8}), 3, caption, false, rng),
                  DimensionError);
  CHECK_THROWS_AS(model.forward(Tensor({2, 6, 8}), 3, caption, false, rng),
                  DimensionError);
  CHECK_THROWS_AS(model.forward(Tensor({2, 12, 8}), 3, caption, false, rng),
                  DimensionError);
  CHECK_THROWS_AS(model.forward(ok, 0, caption, false, rng), ContractError);
  CHECK_THROWS_AS(model.forward(ok, 11, caption, false, rng), ContractError);
  CHECK_THROWS_AS(model.forward(ok, 3, {0, 20}, false, rng), DimensionError);
  CHECK_THROWS_AS(model.forward(ok, 3, {0, 99, 20, 20}, false, rng), ContractError);
}

TEST_CASE("doubling the block count doubles the per-block parameters") {
  ModelConfig one = tiny_config();
  ModelConfig two = tiny_config();
  two.blocks = 2;
  Model m1(one, 9), m2(two, 9);

  auto block_params = [](Model& m) {
    std::size_t n = 0;
    for (const auto& [name, tensor] : m.params()) {
      if (name.rfind("block", 0) == 0) n += tensor.size();
    }
    return n;
  };
  CHECK(block_params(m2) == 2 * block_params(m1));
  CHECK(m2.param_count() - m1.param_count() == block_params(m1));

  // Named parameters cover every tensor exactly once.
  NamedTensors params = m1.params();
  std::size_t total = 0;
  for (const auto& [name, tensor] : params) total += tensor.size();
  CHECK(total == m1.param_count());
}

TEST_CASE("forward handles every desk bucket resolution") {
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.d = 16;
  cfg.d_y = 8;
  cfg.n_y = 8;
  cfg.space_experts = 2;
  cfg.time_experts = 2;
  cfg.T = 10;
  cfg.t_c = 5;
  cfg.d_t = 8;
  cfg.expert_hidden_mult = 1;
  cfg.gate_hidden = 8;
  cfg.edge_layers = 2;
  cfg.edge_channels = 2;
  Model model(cfg, 31);
  RandomStream rng(32);

  std::vector<int> caption(8, 20);
  caption[0] = 0;
  caption[1] = 7;
  caption[2] = 1;

  for (const auto& [h, w] : scaled_buckets(16)) {
    Tensor x({3, h, w});
    rng.fill_normal(x.data());
    const ForwardResult r = model.forward(x, 2, caption, false, rng);
    CHECK(r.eps_hat.shape() == std::vector<int>{3, h, w});
    CHECK(r.h_f == h / 4);
    CHECK(r.w_f == w / 4);
    CHECK(r.maps.size() == 2);
    CHECK(r.maps[0].map.dim(0) == (h / 4) * (w / 4));
    CHECK(r.maps[0].map.dim(1) == 8);
  }
}

TEST_CASE("config validation reports every violation at once") {
  ModelConfig bad = tiny_config();
  bad.blocks = 0;
  bad.d = 15;     // not divisible by heads after we set heads=2
  bad.heads = 2;
  bad.t_c = 99;   // above T
  bad.alpha = 0.0;
  try {
    bad.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("blocks") != std::string::npos);
    CHECK(msg.find("alpha") != std::string::npos);
    CHECK(msg.find("t_c") != std::string::npos);
  }
  CHECK_NOTHROW(tiny_config().validate());
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("adamw warmup schedule and state bookkeeping") {
  NamedTensors params;
  params.emplace("w", Tensor({2}, 1.0, true));
  OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.warmup = 4;
  AdamW opt(params, cfg);

  CHECK(opt.lr_at(1) == doctest::Approx(0.025).epsilon(1e-15));
  CHECK(opt.lr_at(2) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(opt.lr_at(4) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(opt.lr_at(400) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(opt.next_lr() == opt.lr_at(1));
  CHECK(opt.steps() == 0);

  params.at("w").grad()[0] = 1.0;
  opt.step();
  CHECK(opt.steps() == 1);
  NamedTensors state = opt.state_tensors();
  CHECK(state.count("opt.w.m") == 1);
  CHECK(state.count("opt.w.v") == 1);
  CHECK(state.count("opt.step") == 1);
  CHECK(state.at("opt.step").value() == 1.0);

  OptimConfig invalid;
  invalid.lr = -1.0;
  CHECK_THROWS_AS(AdamW(params, invalid), ConfigError);
  invalid = OptimConfig{};
  invalid.warmup = 0;
  CHECK_THROWS_AS(AdamW(params, invalid), ConfigError);
  invalid = OptimConfig{};
  invalid.beta1 = 1.0;
  CHECK_THROWS_AS(AdamW(params, invalid), ConfigError);
}

TEST_CASE("adamw first step matches the closed form") {
  NamedTensors params;
  params.emplace("w", Tensor({1}, 1.0, true));
  OptimConfig cfg;
  cfg.lr = 0.1;
  cfg.warmup = 1;
  AdamW opt(params, cfg);

  const double g = 0.5;
  params.at("w").grad()[0] = g;
  opt.step();

  const double m_hat = (0.1 * g) / (1.0 - 0.9);
  const double v_hat = (0.001 * g * g) / (1.0 - 0.999);
  const double want = 1.0 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
  CHECK(params.at("w").at(0) == doctest::Approx(want).epsilon(1e-15));
}

TEST_CASE("zero learning rate and decoupled decay") {
  NamedTensors params;
  params.emplace("w", Tensor({1}, 2.0, true));
  OptimConfig frozen;
  frozen.lr = 0.0;
  frozen.warmup = 1;
  AdamW opt(params, frozen);
  params.at("w").grad()[0] = 3.0;
  opt.step();
  CHECK(params.at("w").at(0) == 2.0);

  NamedTensors params2;
  params2.emplace("w", Tensor({1}, 2.0, true));
  OptimConfig decay;
  decay.lr = 0.5;
  decay.warmup = 1;
  decay.weight_decay = 0.1;
  AdamW opt2(params2, decay);
  // Zero gradient: the Adam term vanishes and only decay moves the weight.
  opt2.step();
  CHECK(params2.at("w").at(0) == doctest::Approx(2.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-15));
}

TEST_CASE("training steps are reproducible bit for bit") {
  Vocabulary vocab;
  ModelConfig mc = tiny_config();
  mc.channels = 3;
  mc.max_height = 12;
  mc.max_width = 12;
  mc.n_y = 8;
  GenerationConfig gc;
  gc.height = 12;
  gc.width = 12;
  const std::vector<Scene> batch = {gen_scene(1, gc, vocab, 8), gen_scene(2, gc, vocab, 8)};
  const NoiseSchedule sched = NoiseSchedule::linear(10, 1e-4, 0.02);
  TrainOptions opts;
  opts.caption_dropout = 0.0;

  OptimConfig oc;
  oc.lr = 1e-3;
  oc.warmup = 2;

  auto run = [&](int steps) {
    Model model(mc, 55);
    AdamW opt(model.params(), oc);
    RandomStream rng(66);
    TrainMetrics last;
    for (int i = 0; i < steps; ++i) last = train_step(model, batch, sched, opt, opts, rng);
    return last;
  };
  const TrainMetrics a = run(3);
  const TrainMetrics b = run(3);
  CHECK(a.loss == b.loss);
  CHECK(a.denoise == b.denoise);
  CHECK(a.edge == b.edge);
  CHECK(a.timesteps == b.timesteps);
  CHECK(a.step == 3);
  CHECK(a.lr == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(std::isfinite(a.loss));
  CHECK(a.loss >= a.denoise);
}

TEST_CASE("train_step rejects empty and mixed batches") {
  Vocabulary vocab;
  ModelConfig mc = tiny_config();
  mc.channels = 3;
  mc.max_height = 16;
  mc.max_width = 16;
  mc.n_y = 8;
  Model model(mc, 3);
  const NoiseSchedule sched = NoiseSchedule::linear(10, 1e-4, 0.02);
  AdamW opt(model.params(), OptimConfig{});
  TrainOptions opts;
  RandomStream rng(4);

  CHECK_THROWS_AS(train_step(model, {}, sched, opt, opts, rng), ContractError);

  GenerationConfig small;
  small.height = 12;
  small.width = 12;
  GenerationConfig big;
  big.height = 16;
  big.width = 16;
  const std::vector<Scene> mixed = {gen_scene(1, small, vocab, 8),
                                    gen_scene(1, big, vocab, 8)};
  CHECK_THROWS_AS(train_step(model, mixed, sched, opt, opts, rng), ContractError);
}

TEST_CASE("training state checkpoints resume exactly") {
  Vocabulary vocab;
  ModelConfig mc = tiny_config();
  mc.channels = 3;
  mc.max_height = 12;
  mc.max_width = 12;
  mc.n_y = 8;
  GenerationConfig gc;
  gc.height = 12;
  gc.width = 12;
  const std::vector<Scene> batch = {gen_scene(7, gc, vocab, 8)};
  const NoiseSchedule sched = NoiseSchedule::linear(10, 1e-4, 0.02);
  TrainOptions opts;
  opts.caption_dropout = 0.0;
  OptimConfig oc;
  oc.warmup = 1;

  const auto dir = std::filesystem::temp_directory_path() / "moediff_test_model";
  std::filesystem::create_directories(dir);
  const std::string state_path = (dir / "state.ckpt").string();

  Model model(mc, 100);
  AdamW opt(model.params(), oc);
  RandomStream rng(200);
  train_step(model, batch, sched, opt, opts, rng);
  train_step(model, batch, sched, opt, opts, rng);
  save_training_state(model, opt, state_path);
  RandomStream rng_copy = rng;  // same draw position as the live run
  const TrainMetrics cont = train_step(model, batch, sched, opt, opts, rng);
  CHECK(cont.step == 3);

  Model fresh(mc, 999);
  AdamW fopt(fresh.params(), oc);
  load_training_state(fresh, fopt, state_path);
  CHECK(fopt.steps() == 2);
  const TrainMetrics resumed = train_step(fresh, batch, sched, fopt, opts, rng_copy);
  CHECK(resumed.step == 3);
  CHECK(resumed.loss == cont.loss);
  CHECK(resumed.denoise == cont.denoise);
  CHECK(resumed.edge == cont.edge);
  CHECK(resumed.timesteps == cont.timesteps);

  NamedTensors a = model.params();
  NamedTensors b = fresh.params();
  for (const auto& [name, tensor] : a) {
    REQUIRE(b.count(name) == 1);
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      CHECK(tensor.data()[i] == b.at(name).data()[i]);
    }
  }

  CHECK_THROWS_AS(load_training_state(fresh, fopt, (dir / "missing.ckpt").string()),
                  IoError);
}
