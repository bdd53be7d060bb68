// SPDX-License-Identifier: Apache-2.0
#include "moediff/time_moe.hpp"

#include <cmath>

#include "moediff/errors.hpp"

namespace moediff {

Tensor time_embed(int t, int d_t) {
  if (t < 0) throw ContractError("time_embed: negative t");
  if (d_t < 2 || d_t % 2 != 0) throw ConfigError("time_embed: d_t must be even, >= 2");
  const int pairs = d_t / 2;
  Tensor out({d_t});
  for (int i = 0; i < pairs; ++i) {
    const double freq =
        pairs == 1 ? 1.0 : std::pow(10000.0, -static_cast<double>(i) / (pairs - 1));
    out.at(2 * i) = std::sin(t * freq);
    out.at(2 * i + 1) = std::cos(t * freq);
  }
  return out;
}

TimeMoE::TimeMoE(int d, int d_t, int n_t, int expert_hidden, int gate_hidden)
    : d_t_(d_t), gate_(d_t, gate_hidden, n_t) {
  if (n_t < 1) throw ConfigError("time moe: need at least one expert");
  for (int i = 0; i < n_t; ++i) experts_.emplace_back(d, expert_hidden);
}

int TimeMoE::route(int t, double noise_scale, bool train_mode, RandomStream& rng) const {
  Tape::NoGradGuard guard;
  Tensor emb = time_embed(t, d_t_);
  return gate_.route(emb.data(), noise_scale, train_mode, rng);
}

Tensor TimeMoE::forward(const Tensor& h_c, int t, double noise_scale, bool train_mode,
                        RandomStream& rng, RouteSink* sink, int block) const {
  const int chosen = route(t, noise_scale, train_mode, rng);
  if (sink) sink->time_route(t, block, chosen);
  return experts_[static_cast<std::size_t>(chosen)].forward(h_c);
}

std::vector<int> TimeMoE::routing_table(int T) const {
  std::vector<int> table;
  RandomStream unused(0);
  for (int t = 1; t <= T; ++t) table.push_back(route(t, 0.0, false, unused));
  return table;
}

void TimeMoE::init(RandomStream& rng) {
  gate_.init(rng);
  for (auto& e : experts_) e.init(rng);
}

void TimeMoE::collect_params(const std::string& prefix,
                             std::map<std::string, Tensor>& out) {
  gate_.collect_params(prefix + "gate.", out);
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    experts_[i].collect_params(prefix + "expert" + std::to_string(i) + ".", out);
  }
}

}  // namespace moediff
