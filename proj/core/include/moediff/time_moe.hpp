// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "moediff/random.hpp"
#include "moediff/routes.hpp"
#include "moediff/space_moe.hpp"
#include "moediff/tensor.hpp"

namespace moediff {

/// Sinusoidal timestep embedding as interleaved (sin, cos) pairs over a
/// geometric frequency ladder from 1 down to 1/10000:
///   freq_i = 10000^(-i / (d_t/2 - 1)),  i = 0 .. d_t/2 - 1
///   out[2i] = sin(t * freq_i), out[2i+1] = cos(t * freq_i).
/// d_t must be even and >= 2 (a single pair uses freq 1).
Tensor time_embed(int t, int d_t);

/// Timestep-gated expert selection: exactly one expert transforms all image
/// tokens per forward. Output is pre-residual.
class TimeMoE {
 public:
  TimeMoE(int d, int d_t, int n_t, int expert_hidden, int gate_hidden);

  /// argmax(softmax(G'(time_embed(t)) + noise)); depends only on t and the
  /// gate weights.
  int route(int t, double noise_scale, bool train_mode, RandomStream& rng) const;

  Tensor forward(const Tensor& h_c, int t, double noise_scale, bool train_mode,
                 RandomStream& rng, RouteSink* sink = nullptr, int block = 0) const;

  /// The noise-off t -> expert table over [1, T].
  std::vector<int> routing_table(int T) const;

  int experts() const { return static_cast<int>(experts_.size()); }
  int d_t() const { return d_t_; }
  GateNetwork& gate() { return gate_; }
  FeedForwardExpert& expert(int i) { return experts_[static_cast<std::size_t>(i)]; }

  /// Gate first, then experts in index order.
  void init(RandomStream& rng);
  void collect_params(const std::string& prefix, std::map<std::string, Tensor>& out);

 private:
  int d_t_;
  GateNetwork gate_;
  std::vector<FeedForwardExpert> experts_;
};

}  // namespace moediff
