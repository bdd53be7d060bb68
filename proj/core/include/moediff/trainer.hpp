// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "moediff/diffusion.hpp"
#include "moediff/model.hpp"
#include "moediff/optimizer.hpp"
#include "moediff/scene.hpp"

namespace moediff {

struct TrainMetrics {
  long long step = 0;
  double loss = 0.0;
  double denoise = 0.0;
  double edge = 0.0;
  double lr = 0.0;
  std::vector<int> timesteps;  // the t drawn for each batch item
};

struct TrainOptions {
  double caption_dropout = 0.1;  // chance of training an item unconditioned
  double balance_weight = 0.0;   // gate load-balance penalty, off by default
};

/// One optimization step on a same-bucket batch: per item draw t ~ U[1,T]
/// and fresh noise, corrupt, predict, combine denoising and edge losses,
/// backprop, AdamW update. Throws ContractError on an empty or mixed-bucket
/// batch.
TrainMetrics train_step(Model& model, const std::vector<Scene>& batch,
                        const NoiseSchedule& sched, AdamW& opt,
                        const TrainOptions& opts, RandomStream& rng);

/// Appends one "step,L,L_denoise,L_edge,lr" row, writing the header first
/// when the file does not exist yet.
void append_metrics_csv(const std::string& path, const TrainMetrics& m);

struct SamplerConfig {
  int height = 40;
  int width = 40;
  bool ddim = false;
  int ddim_steps = 50;
  double guidance = 1.0;  // w == 1 runs the conditional pass only
  std::uint64_t seed = 0;
};

/// Reverse diffusion from pure noise. DDPM walks every t from T down to 1;
/// DDIM visits a uniform t grid (endpoints included, rounded, deduplicated).
/// Routing decisions reach `sink` when non-null; gate noise is off.
Tensor sample(const Model& model, const NoiseSchedule& sched,
              const std::vector<int>& caption, const SamplerConfig& cfg,
              RouteSink* sink = nullptr);

/// The descending (t, t_prev) visit pairs a DDIM run uses for `steps` steps.
std::vector<std::pair<int, int>> ddim_grid(int T, int steps);

/// Samples with tracing on and returns the per-(t, block) space routes of
/// the first occurrence of `concept_token` in the caption, plus all time
/// routes. Throws ContractError when the token is absent.
RouteTrace trace_routes(const Model& model, const NoiseSchedule& sched,
                        const std::vector<int>& caption, int concept_token,
                        const SamplerConfig& cfg);

/// Parameters plus optimizer state in one checkpoint file.
void save_training_state(Model& model, AdamW& opt, const std::string& path);
void load_training_state(Model& model, AdamW& opt, const std::string& path);

/// Parameters only, for sampling and tracing runs.
void save_model(Model& model, const std::string& path);
void load_model(Model& model, const std::string& path);

}  // namespace moediff
