// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace moediff {

/// Receives routing decisions as the model runs. Space routes are reported
/// per caption position (one call per non-PAD token), time routes once per
/// block.
class RouteSink {
 public:
  virtual ~RouteSink() = default;
  virtual void space_route(int t, int block, int token_pos, int expert) = 0;
  virtual void time_route(int t, int block, int expert) = 0;
};

struct RouteEntry {
  int t = 0;
  int block = 0;
  int expert = 0;
};

/// Collects reported decisions in arrival order. When `tracked_pos` >= 0
/// only space routes for that caption position are kept.
class RecordingRouteSink : public RouteSink {
 public:
  explicit RecordingRouteSink(int tracked_pos = -1) : tracked_pos_(tracked_pos) {}
  void space_route(int t, int block, int token_pos, int expert) override {
    if (tracked_pos_ < 0 || token_pos == tracked_pos_) {
      space_.push_back({t, block, expert});
    }
  }
  void time_route(int t, int block, int expert) override {
    time_.push_back({t, block, expert});
  }
  const std::vector<RouteEntry>& space() const { return space_; }
  const std::vector<RouteEntry>& time() const { return time_; }

 private:
  int tracked_pos_;
  std::vector<RouteEntry> space_, time_;
};

/// Per-(timestep, block) expert choices for one tracked caption position
/// across a full sampling run.
struct RouteTrace {
  int concept_token = -1;
  int concept_pos = -1;
  int blocks = 0;
  std::vector<RouteEntry> space;  // one per (t, block) visited
  std::vector<RouteEntry> time;
};

enum class RouteReduce { kMajority, kFirst, kLast };

/// Collapses a trace to one expert index per block. Majority counts over
/// timesteps with ties to the smallest index; kFirst/kLast take the first or
/// last sampling step's choice.
std::vector<int> reduce_trace(const RouteTrace& trace, RouteReduce mode = RouteReduce::kMajority);

struct RouteDataset {
  std::vector<std::vector<int>> features;  // length-B expert vectors
  std::vector<int> labels;                 // dense class ids
  int num_experts = 0;
  int num_classes = 0;
};

/// Mean held-out accuracy of an in-repo multinomial logistic regression over
/// one-hot-encoded route vectors, stratified k-fold. Throws ContractError on
/// fewer than two classes or fewer than `folds` rows in some class.
double train_route_classifier(const RouteDataset& data, int folds, std::uint64_t seed,
                              int iterations = 300, double lr = 0.5);

/// Returns a copy with labels uniformly shuffled (the leakage control).
RouteDataset shuffle_labels(const RouteDataset& data, std::uint64_t seed);

/// Number of distinct feature vectors observed per class, the route-overlap
/// report.
std::vector<int> distinct_routes_per_class(const RouteDataset& data);

/// CSV: prompt_id,concept_token,t,block,space_expert,time_expert.
void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<RouteTrace>& traces);
/// CSV: label,e_1,...,e_B.
void write_feature_csv(const std::filesystem::path& path, const RouteDataset& data);

}  // namespace moediff
