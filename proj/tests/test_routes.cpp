// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "moediff/errors.hpp"
#include "moediff/model.hpp"
#include "moediff/routes.hpp"
#include "moediff/schedule.hpp"
#include "moediff/trainer.hpp"
#include "moediff/vocab.hpp"

using namespace moediff;

namespace {

ModelConfig trace_config() {
  ModelConfig cfg;
  cfg.blocks = 2;
  cfg.d = 8;
  cfg.d_y = 8;
  cfg.n_y = 8;
  cfg.space_experts = 3;
  cfg.time_experts = 2;
  cfg.heads = 1;
  cfg.T = 5;
  cfg.t_c = 2;
  cfg.patch = 4;
  cfg.channels = 3;
  cfg.d_t = 8;
  cfg.expert_hidden_mult = 1;
  cfg.gate_hidden = 4;
  cfg.max_height = 8;
  cfg.max_width = 8;
  cfg.edge_layers = 2;
  cfg.edge_channels = 2;
  return cfg;
}

std::vector<int> trace_caption() {
  Vocabulary vocab;
  std::vector<int> caption(8, vocab.pad_id());
  caption[0] = vocab.summary_id();
  caption[1] = vocab.id_of("blue");
  caption[2] = vocab.id_of("square");
  return caption;
}

RouteTrace hand_trace() {
  RouteTrace tr;
  tr.concept_token = 9;
  tr.concept_pos = 1;
  tr.blocks = 2;
  // Block 0 visits experts 2,0,2,0,2,0 over t=6..1; block 1 always 1.
  for (int t = 6; t >= 1; --t) {
    tr.space.push_back({t, 0, t % 2 == 0 ? 2 : 0});
    tr.space.push_back({t, 1, 1});
    tr.time.push_back({t, 0, 0});
    tr.time.push_back({t, 1, 1});
  }
  return tr;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("trace reduction modes") {
  const RouteTrace tr = hand_trace();

  // 3 visits each for experts 0 and 2 in block 0: tie breaks low.
  const std::vector<int> maj = reduce_trace(tr, RouteReduce::kMajority);
  CHECK(maj == std::vector<int>{0, 1});

  const std::vector<int> first = reduce_trace(tr, RouteReduce::kFirst);
  CHECK(first == std::vector<int>{2, 1});  // t=6 is visited first

  const std::vector<int> last = reduce_trace(tr, RouteReduce::kLast);
  CHECK(last == std::vector<int>{0, 1});  // t=1 is visited last

  RouteTrace majority = tr;
  majority.space.push_back({0, 0, 2});  // tip block 0 toward expert 2
  CHECK(reduce_trace(majority, RouteReduce::kMajority) == std::vector<int>{2, 1});

  RouteTrace empty;
  empty.blocks = 2;
  CHECK_THROWS_AS(reduce_trace(empty), ContractError);

  RouteTrace missing = tr;
  missing.blocks = 3;  // no entries for block 2
  CHECK_THROWS_AS(reduce_trace(missing), ContractError);
}

TEST_CASE("sampling is deterministic in the seed") {
  Model model(trace_config(), 17);
  const NoiseSchedule sched = NoiseSchedule::linear(5, 1e-4, 0.02);
  SamplerConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.seed = 42;

  const Tensor a = sample(model, sched, trace_caption(), cfg);
  const Tensor b = sample(model, sched, trace_caption(), cfg);
  CHECK(a.shape() == std::vector<int>{3, 8, 8});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
  for (double v : a.data()) CHECK(std::isfinite(v));

  cfg.seed = 43;
  const Tensor c = sample(model, sched, trace_caption(), cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.size() && !differs; ++i) {
    differs = a.data()[i] != c.data()[i];
  }
  CHECK(differs);

  cfg.guidance = 3.0;
  CHECK_NOTHROW(sample(model, sched, trace_caption(), cfg));
  cfg.ddim = true;
  cfg.ddim_steps = 2;
  CHECK_NOTHROW(sample(model, sched, trace_caption(), cfg));
}

TEST_CASE("route traces cover every sampling step and block") {
  Model model(trace_config(), 18);
  const NoiseSchedule sched = NoiseSchedule::linear(5, 1e-4, 0.02);
  const std::vector<int> caption = trace_caption();
  const int tracked = caption[1];

  SamplerConfig ddpm;
  ddpm.height = 8;
  ddpm.width = 8;
  ddpm.seed = 7;
  const RouteTrace full = trace_routes(model, sched, caption, tracked, ddpm);
  CHECK(full.concept_token == tracked);
  CHECK(full.concept_pos == 1);
  CHECK(full.blocks == 2);
  CHECK(full.space.size() == 5 * 2);  // T steps x blocks
  CHECK(full.time.size() == 5 * 2);
  for (const RouteEntry& e : full.space) {
    CHECK(e.expert >= 0);
    CHECK(e.expert < 3);
  }

  const RouteTrace again = trace_routes(model, sched, caption, tracked, ddpm);
  for (std::size_t i = 0; i < full.space.size(); ++i) {
    CHECK(full.space[i].expert == again.space[i].expert);
  }

  SamplerConfig ddim = ddpm;
  ddim.ddim = true;
  ddim.ddim_steps = 3;
  const RouteTrace short_trace = trace_routes(model, sched, caption, tracked, ddim);
  CHECK(short_trace.space.size() == 3 * 2);

  SamplerConfig guided = ddpm;
  guided.guidance = 4.0;
  const RouteTrace guided_trace = trace_routes(model, sched, caption, tracked, guided);
  CHECK(guided_trace.space.size() == 5 * 2);

  CHECK_THROWS_AS(trace_routes(model, sched, caption, 13, ddpm), ContractError);

  const std::vector<int> reduced = reduce_trace(full);
  CHECK(reduced.size() == 2);
}

TEST_CASE("single-expert models trace all-zero features") {
  ModelConfig cfg = trace_config();
  cfg.space_experts = 1;
  cfg.time_experts = 1;
  Model model(cfg, 19);
  const NoiseSchedule sched = NoiseSchedule::linear(5, 1e-4, 0.02);
  SamplerConfig sc;
  sc.height = 8;
  sc.width = 8;
  const RouteTrace tr = trace_routes(model, sched, trace_caption(), trace_caption()[1], sc);
  CHECK(reduce_trace(tr) == std::vector<int>{0, 0});
}

TEST_CASE("route classifier separates disjoint routes perfectly") {
  RouteDataset data;
  data.num_experts = 4;
  data.num_classes = 2;
  for (int i = 0; i < 12; ++i) {
    data.features.push_back({0, 1});
    data.labels.push_back(0);
    data.features.push_back({2, 3});
    data.labels.push_back(1);
  }
  CHECK(train_route_classifier(data, 4, 99) == 1.0);

  // Identical routes for both classes carry no signal; symmetric weights
  // make every prediction fall back to class 0, for exactly half right.
  RouteDataset flat = data;
  for (auto& f : flat.features) f = {1, 1};
  CHECK(train_route_classifier(flat, 4, 99) == 0.5);
}

TEST_CASE("label shuffling destroys the route signal") {
  RouteDataset data;
  data.num_experts = 4;
  data.num_classes = 2;
  for (int i = 0; i < 30; ++i) {
    data.features.push_back({0, 1});
    data.labels.push_back(0);
    data.features.push_back({2, 3});
    data.labels.push_back(1);
  }
  const RouteDataset shuffled = shuffle_labels(data, 123);
  CHECK(shuffled.features == data.features);
  int moved = 0;
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    moved += shuffled.labels[i] != data.labels[i];
  }
  CHECK(moved > 0);
  int ones = 0;
  for (int y : shuffled.labels) ones += y == 1;
  CHECK(ones == 30);  // a permutation preserves label counts

  const double acc = train_route_classifier(shuffled, 5, 7);
  CHECK(acc < 0.8);
  CHECK(train_route_classifier(data, 5, 7) == 1.0);
}

TEST_CASE("route classifier rejects degenerate datasets") {
  RouteDataset one_class;
  one_class.num_experts = 2;
  one_class.num_classes = 1;
  for (int i = 0; i < 10; ++i) {
    one_class.features.push_back({0});
    one_class.labels.push_back(0);
  }
  CHECK_THROWS_AS(train_route_classifier(one_class, 2, 1), ContractError);

  RouteDataset sparse;
  sparse.num_experts = 2;
  sparse.num_classes = 2;
  sparse.features = {{0}, {1}, {0}};
  sparse.labels = {0, 1, 0};
  CHECK_THROWS_AS(train_route_classifier(sparse, 2, 1), ContractError);
  CHECK_THROWS_AS(train_route_classifier(sparse, 1, 1), ContractError);

  RouteDataset ragged;
  ragged.num_experts = 2;
  ragged.num_classes = 2;
  ragged.features = {{0, 1}, {1}, {0, 0}, {1, 1}};
  ragged.labels = {0, 1, 0, 1};
  CHECK_THROWS_AS(train_route_classifier(ragged, 2, 1), ContractError);

  RouteDataset bad_expert;
  bad_expert.num_experts = 2;
  bad_expert.num_classes = 2;
  bad_expert.features = {{0}, {5}, {0}, {1}};
  bad_expert.labels = {0, 1, 0, 1};
  CHECK_THROWS_AS(train_route_classifier(bad_expert, 2, 1), ContractError);
}

TEST_CASE("distinct route counts per class") {
  RouteDataset data;
  data.num_experts = 3;
  data.num_classes = 2;
  data.features = {{0, 1}, {0, 1}, {1, 1}, {2, 2}};
  data.labels = {0, 0, 0, 1};
  CHECK(distinct_routes_per_class(data) == std::vector<int>{2, 1});
}

TEST_CASE("csv writers emit one row per record") {
  const auto dir = std::filesystem::temp_directory_path() / "moediff_test_routes";
  std::filesystem::create_directories(dir);

  const RouteTrace tr = hand_trace();
  const auto trace_path = dir / "trace.csv";
  write_trace_csv(trace_path, {tr, tr});
  CHECK(count_lines(trace_path) == 1 + 2 * tr.space.size());
  std::ifstream in(trace_path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "prompt_id,concept_token,t,block,space_expert,time_expert");
  std::string first_row;
  std::getline(in, first_row);
  CHECK(first_row == "0,9,6,0,2,0");

  RouteDataset data;
  data.num_experts = 3;
  data.num_classes = 2;
  data.features = {{0, 1}, {2, 2}};
  data.labels = {0, 1};
  const auto feat_path = dir / "features.csv";
  write_feature_csv(feat_path, data);
  CHECK(count_lines(feat_path) == 3);
}
