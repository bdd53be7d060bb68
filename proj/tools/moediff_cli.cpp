// SPDX-License-Identifier: Apache-2.0
//
// moediff: one binary for data generation, training, sampling, tracing,
// ablations, and the verification suites.
//
// Exit codes: 0 success, 1 verification failure, 2 usage or config error,
// 3 I/O error.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moediff/buckets.hpp"
#include "moediff/checks.hpp"
#include "moediff/config.hpp"
#include "moediff/errors.hpp"
#include "moediff/image_io.hpp"
#include "moediff/manifest.hpp"
#include "moediff/model.hpp"
#include "moediff/optimizer.hpp"
#include "moediff/routes.hpp"
#include "moediff/scene.hpp"
#include "moediff/trainer.hpp"
#include "moediff/vocab.hpp"

namespace {

using namespace moediff;
namespace fs = std::filesystem;

struct CommonArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
};

RunConfig load_config_or_defaults(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

void write_run_manifest(const std::string& command, const CommonArgs& args) {
  RunManifest m;
  m.command = command;
  m.config_path = args.config;
  m.seed = args.seed;
  m.out_dir = args.out;
  if (!args.config.empty()) {
    std::ifstream f(args.config);
    if (!f) throw IoError("cannot open config " + args.config);
    std::stringstream ss;
    ss << f.rdbuf();
    m.config_hash = fnv1a64(ss.str());
  }
  write_manifest(m);
}

std::vector<int> parse_prompt(const std::string& text, const Vocabulary& vocab,
                              int n_y) {
  std::istringstream ss(text);
  std::vector<int> ids = {vocab.summary_id()};
  std::string word;
  while (ss >> word) ids.push_back(vocab.id_of(word));
  if (static_cast<int>(ids.size()) > n_y) {
    throw ConfigError("prompt has " + std::to_string(ids.size() - 1) +
                      " words; caption budget is " + std::to_string(n_y - 1));
  }
  ids.resize(static_cast<std::size_t>(n_y), vocab.pad_id());
  return ids;
}

struct LoadedDataset {
  std::vector<Scene> scenes;
  std::vector<std::vector<int>> batches;  // same-bucket index groups
};

LoadedDataset load_scenes(const std::vector<SceneRecord>& records, const RunConfig& rc,
                          const Vocabulary& vocab, std::uint64_t shuffle_seed) {
  const BucketSpec buckets = scaled_buckets(rc.bucket_divisor);
  GenerationConfig base;
  base.edge_threshold = rc.edge_threshold;

  LoadedDataset data;
  data.scenes.reserve(records.size());
  std::map<int, std::vector<int>> by_bucket;
  for (std::size_t i = 0; i < records.size(); ++i) {
    data.scenes.push_back(
        scene_from_record(records[i], base, vocab, buckets, rc.model.n_y));
    by_bucket[records[i].bucket].push_back(static_cast<int>(i));
  }
  for (auto& [bucket, ids] : by_bucket) {
    (void)bucket;
    for (std::size_t start = 0; start < ids.size();
         start += static_cast<std::size_t>(rc.batch)) {
      const std::size_t end =
          std::min(ids.size(), start + static_cast<std::size_t>(rc.batch));
      data.batches.emplace_back(ids.begin() + static_cast<long>(start),
                                ids.begin() + static_cast<long>(end));
    }
  }
  if (data.batches.empty()) throw ConfigError("dataset is empty");
  RandomStream rng(shuffle_seed, 6);
  for (std::size_t i = data.batches.size(); i > 1; --i) {
    std::swap(data.batches[i - 1],
              data.batches[static_cast<std::size_t>(
                  rng.uniform_int(static_cast<int>(i)))]);
  }
  return data;
}

struct TrainRunStats {
  double final_denoise = 0.0;  // mean over the trailing window
  double seconds_per_step = 0.0;
};

TrainRunStats train_loop(Model& model, AdamW& opt, const RunConfig& rc,
                         const NoiseSchedule& sched, const LoadedDataset& data,
                         int steps, std::uint64_t seed, const std::string& metrics_csv,
                         const std::string& ckpt_dir, int ckpt_every) {
  RandomStream rng(seed, 7);
  std::vector<double> denoise;
  const auto t0 = std::chrono::steady_clock::now();
  for (int step = 0; step < steps; ++step) {
    const auto& ids = data.batches[static_cast<std::size_t>(step) % data.batches.size()];
    std::vector<Scene> batch;
    batch.reserve(ids.size());
    for (int id : ids) batch.push_back(data.scenes[static_cast<std::size_t>(id)]);
    const TrainMetrics m = train_step(model, batch, sched, opt, rc.train, rng);
    denoise.push_back(m.denoise);
    if (!metrics_csv.empty()) append_metrics_csv(metrics_csv, m);
    if (!ckpt_dir.empty() && ckpt_every > 0 && (step + 1) % ckpt_every == 0) {
      save_model(model, ckpt_dir + "/model.ckpt");
      save_training_state(model, opt, ckpt_dir + "/state.ckpt");
    }
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  TrainRunStats stats;
  const std::size_t window = std::min<std::size_t>(10, denoise.size());
  for (std::size_t i = 0; i < window; ++i) {
    stats.final_denoise += denoise[denoise.size() - 1 - i];
  }
  if (window > 0) stats.final_denoise /= static_cast<double>(window);
  stats.seconds_per_step = steps > 0 ? elapsed / steps : 0.0;
  return stats;
}

/// Fraction of one-object color prompts whose sampled image is dominated by
/// the prompted color. Weak by construction; it only has to move with
/// training quality, not measure it well.
double alignment_score(const Model& model, const NoiseSchedule& sched,
                       const Vocabulary& vocab, int n_y, double guidance,
                       std::uint64_t seed) {
  SamplerConfig scfg;
  scfg.height = 28;
  scfg.width = 28;
  scfg.ddim = true;
  scfg.ddim_steps = 10;
  scfg.guidance = guidance;
  int hits = 0;
  const auto& colors = vocab.color_ids();
  for (std::size_t i = 0; i < colors.size(); ++i) {
    std::vector<int> caption = empty_caption(vocab, n_y);
    caption[1] = colors[i];
    caption[2] = vocab.shape_ids()[i % vocab.shape_ids().size()];
    scfg.seed = seed + i;
    const Tensor image = sample(model, sched, caption, scfg);
    if (dominant_color(image, vocab) == colors[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(colors.size());
}

// ------------------------------------------------------------ subcommands

int cmd_gen_data(const CommonArgs& args, int count) {
  write_run_manifest("gen-data", args);
  const RunConfig rc = load_config_or_defaults(args.config);
  const Vocabulary vocab;
  GenerationConfig base;
  base.edge_threshold = rc.edge_threshold;
  const auto records = generate_dataset(count, args.seed, base, vocab,
                                        scaled_buckets(rc.bucket_divisor),
                                        rc.model.n_y);
  write_dataset_manifest(fs::path(args.out) / "dataset.txt", records);
  std::cout << "wrote " << records.size() << " records to " << args.out
            << "/dataset.txt\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_path, int steps,
              const std::string& resume, int ckpt_every, const RunConfig& rc) {
  write_run_manifest("train", args);
  const Vocabulary vocab;
  const auto records = read_dataset_manifest(data_path);
  const LoadedDataset data = load_scenes(records, rc, vocab, args.seed);
  const auto sched =
      NoiseSchedule::linear(rc.model.T, rc.beta_start, rc.beta_end, rc.sigma);

  Model model(rc.model, args.seed);
  AdamW opt(model.params(), rc.optim);
  if (!resume.empty()) load_training_state(model, opt, resume);

  std::cout << "model parameters: " << model.param_count() << "\n";
  const TrainRunStats stats =
      train_loop(model, opt, rc, sched, data, steps, args.seed,
                 args.out + "/metrics.csv", args.out, ckpt_every);
  save_model(model, args.out + "/model.ckpt");
  save_training_state(model, opt, args.out + "/state.ckpt");
  std::cout << "trained " << steps << " steps (" << stats.seconds_per_step
            << " s/step), final L_denoise " << stats.final_denoise << "\n";
  return 0;
}

int cmd_sample(const CommonArgs& args, const std::string& model_path,
               const std::string& prompt, SamplerConfig scfg, const RunConfig& rc) {
  write_run_manifest("sample", args);
  const Vocabulary vocab;
  Model model(rc.model, args.seed);
  if (!model_path.empty()) load_model(model, model_path);
  const auto sched =
      NoiseSchedule::linear(rc.model.T, rc.beta_start, rc.beta_end, rc.sigma);
  const std::vector<int> caption = parse_prompt(prompt, vocab, rc.model.n_y);
  scfg.seed = args.seed;
  const Tensor image = sample(model, sched, caption, scfg);
  const fs::path out = fs::path(args.out) / "sample.ppm";
  write_ppm(out, image);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_trace(const CommonArgs& args, const std::string& model_path,
              const std::string& prompt, const std::string& concept_word,
              SamplerConfig scfg, const RunConfig& rc) {
  write_run_manifest("trace", args);
  const Vocabulary vocab;
  Model model(rc.model, args.seed);
  if (!model_path.empty()) load_model(model, model_path);
  const auto sched =
      NoiseSchedule::linear(rc.model.T, rc.beta_start, rc.beta_end, rc.sigma);
  const std::vector<int> caption = parse_prompt(prompt, vocab, rc.model.n_y);
  scfg.seed = args.seed;
  const RouteTrace trace =
      trace_routes(model, sched, caption, vocab.id_of(concept_word), scfg);
  write_trace_csv(fs::path(args.out) / "trace.csv", {trace});
  const std::vector<int> reduced = reduce_trace(trace);
  std::cout << "route for '" << concept_word << "':";
  for (int e : reduced) std::cout << ' ' << e;
  std::cout << "\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& knob,
               std::vector<double> values, const std::string& data_path, int count,
               int steps, const RunConfig& rc) {
  write_run_manifest("ablate", args);
  if (values.empty()) {
    if (knob == "guidance") {
      values = {1.5, 3.0, 4.5, 6.0, 7.5, 9.0};
    } else {
      throw ConfigError("--values is required for knob '" + knob + "'");
    }
  }

  const Vocabulary vocab;
  std::vector<SceneRecord> records;
  if (!data_path.empty()) {
    records = read_dataset_manifest(data_path);
  } else {
    GenerationConfig base;
    base.edge_threshold = rc.edge_threshold;
    records = generate_dataset(count, args.seed + 1, base, vocab,
                               scaled_buckets(rc.bucket_divisor), rc.model.n_y);
  }

  std::ofstream csv(fs::path(args.out) / "ablate.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot open " + args.out + "/ablate.csv");
  csv << "value,L_denoise_final,alignment,seconds_per_step\n";

  // The guidance knob only changes sampling, so its sweep trains one
  // baseline; every other knob retrains per value.
  std::unique_ptr<Model> model;
  TrainRunStats stats;
  auto run_one = [&](const RunConfig& run_rc, double guidance, double value) {
    const auto sched = NoiseSchedule::linear(run_rc.model.T, run_rc.beta_start,
                                             run_rc.beta_end, run_rc.sigma);
    if (!model) {
      const LoadedDataset data = load_scenes(records, run_rc, vocab, args.seed);
      model = std::make_unique<Model>(run_rc.model, args.seed);
      AdamW opt(model->params(), run_rc.optim);
      stats = train_loop(*model, opt, run_rc, sched, data, steps, args.seed, "", "", 0);
    }
    const double align = alignment_score(*model, sched, vocab, run_rc.model.n_y,
                                         guidance, args.seed + 97);
    char line[160];
    std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g\n", value,
                  stats.final_denoise, align, stats.seconds_per_step);
    csv << line;
    std::cout << knob << "=" << value << ": L_denoise " << stats.final_denoise
              << ", alignment " << align << ", " << stats.seconds_per_step
              << " s/step\n";
  };

  if (knob == "guidance") {
    for (double v : values) run_one(rc, v, v);
  } else {
    for (double v : values) {
      RunConfig run_rc = rc;
      if (knob == "alpha") {
        run_rc.model.alpha = v;
      } else if (knob == "tc") {
        run_rc.model.t_c = static_cast<int>(std::llround(v));
      } else if (knob == "experts") {
        run_rc.model.space_experts = static_cast<int>(std::llround(v));
      }
      run_rc.model.validate();
      model.reset();
      run_one(run_rc, 1.0, v);
    }
  }
  if (!csv) throw IoError("write to " + args.out + "/ablate.csv failed");
  return 0;
}

int cmd_verify(const std::string& suite, const std::string& out) {
  if (!out.empty()) {
    CommonArgs args;
    args.out = out;
    write_run_manifest("verify", args);
  }
  bool all_pass = true;
  for (int id : check::suite_ids(suite)) {
    const check::CheckResult r = check::run(id);
    std::cout << check::format_result(r) << "\n" << std::flush;
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"text-conditional mixture-of-experts diffusion, desk scale"};
  app.require_subcommand(1);

  CommonArgs args;
  int count = 256;
  std::string data_path, model_path, resume, prompt, concept_word, knob, suite = "all";
  int steps = 500, ckpt_every = 100, ablate_steps = 150, ablate_count = 128;
  std::vector<double> values;
  SamplerConfig scfg;
  double lr = 0.0, weight_decay = 0.0, alpha = 0.0;
  int batch = 0, warmup = 0, experts = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", args.config, "key = value run configuration file");
    cmd->add_option("--out", args.out, "output directory")->required();
    cmd->add_option("--seed", args.seed, "root seed for this run");
  };
  auto add_sampler = [&](CLI::App* cmd) {
    cmd->add_option("--height", scfg.height, "image height");
    cmd->add_option("--width", scfg.width, "image width");
    cmd->add_flag("--ddim", scfg.ddim, "deterministic sampler");
    cmd->add_option("--ddim-steps", scfg.ddim_steps, "DDIM step count");
    cmd->add_option("--guidance", scfg.guidance, "guidance weight (1 = conditional)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
  add_common(gen);
  gen->add_option("--count", count, "number of scenes");

  CLI::App* train = app.add_subcommand("train", "train the denoiser");
  add_common(train);
  train->add_option("--data", data_path, "dataset manifest")->required();
  train->add_option("--steps", steps, "optimization steps to run");
  train->add_option("--resume", resume, "training-state checkpoint to continue from");
  train->add_option("--ckpt-every", ckpt_every, "checkpoint period in steps");
  train->add_option("--lr", lr, "override: learning rate");
  train->add_option("--weight-decay", weight_decay, "override: weight decay");
  train->add_option("--warmup", warmup, "override: warmup steps");
  train->add_option("--batch", batch, "override: batch size");
  train->add_option("--alpha", alpha, "override: mask threshold fraction");
  train->add_option("--experts", experts, "override: space expert count");

  CLI::App* sam = app.add_subcommand("sample", "sample an image from a prompt");
  add_common(sam);
  add_sampler(sam);
  sam->add_option("--model", model_path, "model checkpoint (absent: fresh init)");
  sam->add_option("--prompt", prompt, "caption words, space separated")->required();

  CLI::App* trace = app.add_subcommand("trace", "record expert routes for a prompt");
  add_common(trace);
  add_sampler(trace);
  trace->add_option("--model", model_path, "model checkpoint (absent: fresh init)");
  trace->add_option("--prompt", prompt, "caption words, space separated")->required();
  trace->add_option("--concept", concept_word, "tracked caption word")->required();

  CLI::App* abl = app.add_subcommand("ablate", "sweep one knob and tabulate metrics");
  add_common(abl);
  abl->add_option("--knob", knob, "one of alpha, tc, experts, guidance")
      ->required()
      ->check(CLI::IsMember({"alpha", "tc", "experts", "guidance"}));
  abl->add_option("--values", values, "swept values (guidance has defaults)");
  abl->add_option("--data", data_path, "dataset manifest (absent: generated)");
  abl->add_option("--count", ablate_count, "generated scene count");
  abl->add_option("--steps", ablate_steps, "training steps per value");

  CLI::App* verify = app.add_subcommand("verify", "run acceptance suites");
  verify->add_option("--suite", suite, "grad, oracle, stats, or all")
      ->check(CLI::IsMember({"grad", "oracle", "stats", "all"}));
  verify->add_option("--out", args.out, "optional manifest directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args, count);
    if (train->parsed()) {
      RunConfig rc = load_config_or_defaults(args.config);
      if (train->count("--lr") > 0) rc.optim.lr = lr;
      if (train->count("--weight-decay") > 0) rc.optim.weight_decay = weight_decay;
      if (train->count("--warmup") > 0) rc.optim.warmup = warmup;
      if (train->count("--batch") > 0) rc.batch = batch;
      if (train->count("--alpha") > 0) rc.model.alpha = alpha;
      if (train->count("--experts") > 0) rc.model.space_experts = experts;
      rc.model.validate();
      return cmd_train(args, data_path, steps, resume, ckpt_every, rc);
    }
    if (sam->parsed()) {
      return cmd_sample(args, model_path, prompt, scfg,
                        load_config_or_defaults(args.config));
    }
    if (trace->parsed()) {
      return cmd_trace(args, model_path, prompt, concept_word, scfg,
                       load_config_or_defaults(args.config));
    }
    if (abl->parsed()) {
      return cmd_ablate(args, knob, values, data_path, ablate_count, ablate_steps,
                        load_config_or_defaults(args.config));
    }
    if (verify->parsed()) return cmd_verify(suite, args.out);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
