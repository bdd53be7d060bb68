// SPDX-License-Identifier: Apache-2.0
#include "moediff/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "moediff/errors.hpp"

namespace moediff {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

ConfigReader ConfigReader::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return from_string(text.str());
}

ConfigReader ConfigReader::from_string(const std::string& text) {
  ConfigReader reader;
  std::istringstream lines(text);
  std::string line;
  std::vector<std::string> structural;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      structural.push_back("line " + std::to_string(line_no) + ": missing '='");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      structural.push_back("line " + std::to_string(line_no) + ": empty key");
      continue;
    }
    if (!reader.values_.emplace(key, value).second) {
      structural.push_back("line " + std::to_string(line_no) + ": duplicate key '" +
                           key + "'");
    }
  }
  if (!structural.empty()) {
    std::string msg = "malformed config:";
    for (const auto& s : structural) msg += " " + s + ";";
    msg.pop_back();
    throw FormatError(msg);
  }
  return reader;
}

int ConfigReader::get_int(const std::string& key, int fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  char* end = nullptr;
  const long v = std::strtol(it->second.c_str(), &end, 10);
  if (it->second.empty() || *end != '\0') {
    problems_.push_back(key + ": '" + it->second + "' is not an integer");
    return fallback;
  }
  return static_cast<int>(v);
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  char* end = nullptr;
  const double v = std::strtod(it->second.c_str(), &end);
  if (it->second.empty() || *end != '\0') {
    problems_.push_back(key + ": '" + it->second + "' is not a number");
    return fallback;
  }
  return v;
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  problems_.push_back(key + ": '" + it->second + "' is not a boolean");
  return fallback;
}

std::string ConfigReader::get_string(const std::string& key,
                                     const std::string& fallback) {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  return it->second;
}

void ConfigReader::finish() const {
  std::vector<std::string> all = problems_;
  for (const auto& [key, value] : values_) {
    (void)value;
    if (used_.count(key) == 0) all.push_back("unknown key '" + key + "'");
  }
  if (all.empty()) return;
  std::string msg = "config:";
  for (const auto& s : all) msg += " " + s + ";";
  msg.pop_back();
  throw ConfigError(msg);
}

RunConfig parse_run_config(ConfigReader& reader) {
  RunConfig rc;
  ModelConfig& m = rc.model;
  m.blocks = reader.get_int("blocks", m.blocks);
  m.d = reader.get_int("d", m.d);
  m.d_y = reader.get_int("d_y", m.d_y);
  m.n_y = reader.get_int("n_y", m.n_y);
  m.space_experts = reader.get_int("space_experts", m.space_experts);
  m.time_experts = reader.get_int("time_experts", m.time_experts);
  m.heads = reader.get_int("heads", m.heads);
  m.T = reader.get_int("T", m.T);
  m.t_c = reader.get_int("t_c", m.t_c);
  m.alpha = reader.get_double("alpha", m.alpha);
  m.patch = reader.get_int("patch", m.patch);
  m.d_t = reader.get_int("d_t", m.d_t);
  m.expert_hidden_mult = reader.get_int("expert_hidden_mult", m.expert_hidden_mult);
  m.gate_hidden = reader.get_int("gate_hidden", m.gate_hidden);
  m.max_height = reader.get_int("max_height", m.max_height);
  m.max_width = reader.get_int("max_width", m.max_width);
  m.edge_layers = reader.get_int("edge_layers", m.edge_layers);
  m.edge_channels = reader.get_int("edge_channels", m.edge_channels);
  m.edge_kernel = reader.get_int("edge_kernel", m.edge_kernel);
  m.edge_per_block = reader.get_bool("edge_per_block", m.edge_per_block);
  m.gate_noise = reader.get_double("gate_noise", m.gate_noise);
  m.focal.alpha_f = reader.get_double("focal_alpha", m.focal.alpha_f);
  m.focal.gamma = reader.get_double("focal_gamma", m.focal.gamma);

  rc.optim.lr = reader.get_double("lr", rc.optim.lr);
  rc.optim.weight_decay = reader.get_double("weight_decay", rc.optim.weight_decay);
  rc.optim.warmup = reader.get_int("warmup", rc.optim.warmup);
  rc.train.caption_dropout =
      reader.get_double("caption_dropout", rc.train.caption_dropout);
  rc.train.balance_weight =
      reader.get_double("balance_weight", rc.train.balance_weight);

  rc.beta_start = reader.get_double("beta_start", rc.beta_start);
  rc.beta_end = reader.get_double("beta_end", rc.beta_end);
  const std::string sigma = reader.get_string("sigma", "sqrt_beta");
  if (sigma == "sqrt_beta") {
    rc.sigma = SigmaMode::kSqrtBeta;
  } else if (sigma == "posterior") {
    rc.sigma = SigmaMode::kPosterior;
  } else {
    throw ConfigError("config: sigma must be sqrt_beta or posterior, got '" + sigma +
                      "'");
  }
  rc.batch = reader.get_int("batch", rc.batch);
  rc.bucket_divisor = reader.get_int("bucket_divisor", rc.bucket_divisor);
  rc.edge_threshold = reader.get_double("edge_threshold", rc.edge_threshold);

  reader.finish();
  if (rc.batch < 1) throw ConfigError("config: batch must be >= 1");
  if (rc.bucket_divisor < 1) throw ConfigError("config: bucket_divisor must be >= 1");
  m.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  ConfigReader reader = ConfigReader::from_file(path);
  return parse_run_config(reader);
}

}  // namespace moediff
