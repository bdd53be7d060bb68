// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "moediff/attention.hpp"
#include "moediff/model.hpp"
#include "moediff/optimizer.hpp"
#include "moediff/random.hpp"
#include "moediff/scene.hpp"
#include "moediff/space_moe.hpp"
#include "moediff/tensor.hpp"
#include "moediff/trainer.hpp"

using namespace moediff;

namespace {

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  RandomStream rng(seed);
  rng.fill_normal(t.data());
  return t;
}

void bm_matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Tensor a = random_tensor({n, n}, 1);
  const Tensor b = random_tensor({n, n}, 2);
  Tape::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void bm_cross_attention(benchmark::State& state) {
  const int n_x = static_cast<int>(state.range(0));
  const int d = 64, d_y = 32, n_y = 16;
  const Tensor h = random_tensor({n_x, d}, 3);
  const Tensor text = random_tensor({n_y, d_y}, 4);
  AttentionParams p;
  p.wq = random_tensor({d, d}, 5);
  p.wk = random_tensor({d_y, d}, 6);
  p.wv = random_tensor({d_y, d}, 7);
  std::vector<bool> pads(n_y, false);
  pads.back() = true;
  Tape::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(cross_attention(h, text, p, pads, 1));
  }
}

void bm_space_moe(benchmark::State& state) {
  const int experts = static_cast<int>(state.range(0));
  const int n_x = 100, d = 64, d_y = 32, n_y = 16;
  SpaceMoE moe(d, d_y, experts, 4 * d, 32);
  RandomStream init(8);
  moe.init(init);
  const Tensor h = random_tensor({n_x, d}, 9);
  const Tensor text = random_tensor({n_y, d_y}, 10);
  AttentionMap map;
  map.map = Tensor({n_x, n_y});
  RandomStream mr(11);
  mr.fill_uniform(map.map.data());
  map.pad_cols.assign(n_y, false);
  for (int i = 7; i < n_y; ++i) map.pad_cols[static_cast<std::size_t>(i)] = true;
  RandomStream rng(12);
  Tape::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(moe.forward(h, text, map, 0.2, 0.0, false, rng));
  }
}

void bm_model_forward(benchmark::State& state) {
  ModelConfig cfg;  // desk defaults
  Model model(cfg, 13);
  const int hw = static_cast<int>(state.range(0));
  const Tensor x = random_tensor({3, hw, hw}, 14);
  std::vector<int> caption(static_cast<std::size_t>(cfg.n_y), 20);
  caption[0] = 0;
  caption[1] = 7;
  caption[2] = 1;
  RandomStream rng(15);
  Tape::NoGradGuard guard;
  for (auto _ : state) {
    benchmark::DoNotOptimize(model.forward(x, 250, caption, false, rng));
  }
}

void bm_train_step(benchmark::State& state) {
  Vocabulary vocab;
  ModelConfig mc;  // desk defaults
  GenerationConfig gc;
  gc.height = 28;
  gc.width = 28;
  std::vector<Scene> batch;
  for (std::uint64_t s = 1; s <= 4; ++s) batch.push_back(gen_scene(s, gc, vocab, mc.n_y));
  Model model(mc, 16);
  const NoiseSchedule sched = NoiseSchedule::linear(mc.T, 1e-4, 0.02);
  AdamW opt(model.params(), OptimConfig{});
  TrainOptions opts;
  RandomStream rng(17);
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_step(model, batch, sched, opt, opts, rng));
  }
}

BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_cross_attention)->Arg(49)->Arg(169)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_space_moe)->Arg(1)->Arg(2)->Arg(4)->Arg(6)->Unit(benchmark::kMicrosecond);
BENCHMARK(bm_model_forward)->Arg(28)->Arg(40)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
