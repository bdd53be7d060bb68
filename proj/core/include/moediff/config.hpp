// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "moediff/model.hpp"
#include "moediff/optimizer.hpp"
#include "moediff/schedule.hpp"
#include "moediff/trainer.hpp"

namespace moediff {

/// Line-oriented "key = value" file with '#' comments. Structural problems
/// (missing '=', empty key, duplicate key) raise FormatError listing every
/// offending line. Typed getters record value problems instead of throwing;
/// finish() then raises one ConfigError naming every bad value and every key
/// the program never asked for.
class ConfigReader {
 public:
  static ConfigReader from_file(const std::string& path);
  static ConfigReader from_string(const std::string& text);

  int get_int(const std::string& key, int fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::string get_string(const std::string& key, const std::string& fallback);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void finish() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> used_;
  std::vector<std::string> problems_;
};

/// Everything a run needs beyond the CLI flags.
struct RunConfig {
  ModelConfig model;
  OptimConfig optim;
  TrainOptions train;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SigmaMode sigma = SigmaMode::kSqrtBeta;
  int batch = 4;
  int bucket_divisor = 16;  // scales the reference buckets to desk size
  double edge_threshold = 0.25;
};

/// Applies every recognized key over the defaults; unknown keys and bad
/// values raise one combined ConfigError. The resulting model config is
/// validated.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(ConfigReader& reader);

}  // namespace moediff
