// SPDX-License-Identifier: Apache-2.0
#include "moediff/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "moediff/errors.hpp"

namespace moediff {

TrainMetrics train_step(Model& model, const std::vector<Scene>& batch,
                        const NoiseSchedule& sched, AdamW& opt,
                        const TrainOptions& opts, RandomStream& rng) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const auto& shape0 = batch.front().image.shape();
  for (const Scene& s : batch) {
    if (s.image.shape() != shape0) {
      throw ContractError("train_step: mixed-bucket batch (" +
                          batch.front().image.shape_str() + " vs " +
                          s.image.shape_str() + ")");
    }
  }
  const ModelConfig& cfg = model.config();
  const std::vector<int> uncond = empty_caption_ids(cfg.vocab, cfg.n_y);

  TrainMetrics m;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Tensor denoise_sum = Tensor::scalar(0.0);
  Tensor edge_sum = Tensor::scalar(0.0);
  for (const Scene& scene : batch) {
    const int t = 1 + rng.uniform_int(cfg.T);
    m.timesteps.push_back(t);
    Tensor eps(scene.image.shape());
    rng.fill_normal(eps.data());
    const bool drop = rng.uniform() < opts.caption_dropout;
    const std::vector<int>& caption = drop ? uncond : scene.caption;

    Tensor x_t = q_sample(scene.image, t, eps, sched);
    ForwardResult fwd = model.forward(x_t, t, caption, true, rng);
    denoise_sum = add(denoise_sum, mse(fwd.eps_hat, eps));
    edge_sum = add(edge_sum, model.edge_losses(fwd.maps, scene.edge_map, t, fwd.h_f,
                                               fwd.w_f));
    if (opts.balance_weight > 0.0) {
      edge_sum = add(edge_sum, affine(model.balance_losses(caption, true, rng),
                                      opts.balance_weight, 0.0));
    }
  }
  Tensor denoise = affine(denoise_sum, inv_b, 0.0);
  Tensor edge = affine(edge_sum, inv_b, 0.0);
  Tensor loss = add(denoise, edge);

  opt.zero_grad();
  backward(loss);
  opt.step();

  m.step = opt.steps();
  m.loss = loss.value();
  m.denoise = denoise.value();
  m.edge = edge.value();
  m.lr = opt.lr_at(opt.steps());
  return m;
}

void append_metrics_csv(const std::string& path, const TrainMetrics& m) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open metrics file: " + path);
  if (fresh) out << "step,L,L_denoise,L_edge,lr\n";
  char row[160];
  std::snprintf(row, sizeof(row), "%lld,%.17g,%.17g,%.17g,%.17g\n", m.step, m.loss,
                m.denoise, m.edge, m.lr);
  out << row;
  if (!out) throw IoError("failed writing metrics file: " + path);
}

std::vector<std::pair<int, int>> ddim_grid(int T, int steps) {
  if (steps < 1) throw ConfigError("ddim_grid: steps must be >= 1");
  std::vector<int> ts{0};
  for (int i = 1; i <= steps; ++i) {
    const int t = static_cast<int>(
        std::llround(static_cast<double>(i) * T / steps));
    if (t > ts.back()) ts.push_back(t);
  }
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = ts.size(); i-- > 1;) {
    pairs.emplace_back(ts[i], ts[i - 1]);
  }
  return pairs;
}

namespace {

Tensor predict_eps(const Model& model, const Tensor& x, int t,
                   const std::vector<int>& caption, const std::vector<int>& uncond,
                   double w, RandomStream& rng, RouteSink* sink) {
  Tensor eps_c = model.forward(x, t, caption, false, rng, sink).eps_hat;
  if (w == 1.0) return eps_c;
  Tensor eps_u = model.forward(x, t, uncond, false, rng).eps_hat;
  return cfg_combine(eps_c, eps_u, w);
}

}  // namespace

Tensor sample(const Model& model, const NoiseSchedule& sched,
              const std::vector<int>& caption, const SamplerConfig& cfg,
              RouteSink* sink) {
  const ModelConfig& mc = model.config();
  Tape::NoGradGuard guard;
  RandomStream rng(cfg.seed, 3);
  const std::vector<int> uncond = empty_caption_ids(mc.vocab, mc.n_y);

  Tensor x({mc.channels, cfg.height, cfg.width});
  rng.fill_normal(x.data());

  if (cfg.ddim) {
    for (const auto& [t, t_prev] : ddim_grid(sched.T(), cfg.ddim_steps)) {
      Tensor eps = predict_eps(model, x, t, caption, uncond, cfg.guidance, rng, sink);
      x = ddim_step(x, t, t_prev, eps, sched);
    }
    return x;
  }
  for (int t = sched.T(); t >= 1; --t) {
    Tensor eps = predict_eps(model, x, t, caption, uncond, cfg.guidance, rng, sink);
    Tensor z(x.shape());
    if (t > 1) rng.fill_normal(z.data());
    x = ddpm_step(x, t, eps, z, sched);
  }
  return x;
}

RouteTrace trace_routes(const Model& model, const NoiseSchedule& sched,
                        const std::vector<int>& caption, int concept_token,
                        const SamplerConfig& cfg) {
  int pos = -1;
  for (std::size_t i = 0; i < caption.size(); ++i) {
    if (caption[i] == concept_token) {
      pos = static_cast<int>(i);
      break;
    }
  }
  if (pos < 0) {
    throw ContractError("trace_routes: concept token " +
                        std::to_string(concept_token) + " absent from the caption");
  }
  RecordingRouteSink sink(pos);
  sample(model, sched, caption, cfg, &sink);
  RouteTrace trace;
  trace.concept_token = concept_token;
  trace.concept_pos = pos;
  trace.blocks = model.config().blocks;
  trace.space = sink.space();
  trace.time = sink.time();
  return trace;
}

void save_training_state(Model& model, AdamW& opt, const std::string& path) {
  NamedTensors all = model.params();
  for (auto& [name, t] : opt.state_tensors()) all.emplace(name, t);
  save_checkpoint(path, all);
}

void load_training_state(Model& model, AdamW& opt, const std::string& path) {
  NamedTensors all = model.params();
  for (auto& [name, t] : opt.state_tensors()) all.emplace(name, t);
  load_checkpoint_into(path, all);
}

void save_model(Model& model, const std::string& path) {
  NamedTensors params = model.params();
  save_checkpoint(path, params);
}

void load_model(Model& model, const std::string& path) {
  NamedTensors params = model.params();
  load_checkpoint_into(path, params);
}

}  // namespace moediff
