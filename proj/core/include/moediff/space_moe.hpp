// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "moediff/attention.hpp"
#include "moediff/random.hpp"
#include "moediff/routes.hpp"
#include "moediff/tensor.hpp"

namespace moediff {

/// Two-matrix GELU feed-forward block with an internal skip,
///   e(x) = x + gelu(x W_in) W_out,
/// applied row-wise. Bias-free so that e(0) == 0 for any weights, and
/// exactly the identity when W_out is zero.
struct FeedForwardExpert {
  Tensor w_in;   // [d, hidden]
  Tensor w_out;  // [hidden, d]

  FeedForwardExpert(int d, int hidden);
  Tensor forward(const Tensor& x) const;
  /// w_in U(+-1/sqrt(d)), w_out U(+-1/sqrt(hidden)).
  void init(RandomStream& rng);
  void collect_params(const std::string& prefix, std::map<std::string, Tensor>& out);
};

/// One-hidden-layer GELU gate producing expert logits. Routing adds optional
/// standard-normal noise (training only) and takes the softmax argmax.
struct GateNetwork {
  Tensor w1, b1;  // [in, hidden], [hidden]
  Tensor w2, b2;  // [hidden, out], [out]

  GateNetwork(int in, int hidden, int out);
  int out_dim() const { return w2.dim(1); }
  /// Raw logits for a single input row; never recorded on the tape.
  std::vector<double> logits(const std::vector<double>& input) const;
  /// argmax(softmax(logits + noise_scale * eps)); eps ~ N(0,1) iid when
  /// noise_scale > 0 and train_mode, else 0.
  int route(const std::vector<double>& input, double noise_scale, bool train_mode,
            RandomStream& rng) const;
  /// Weights fan-in uniform, biases stay zero.
  void init(RandomStream& rng);
  void collect_params(const std::string& prefix, std::map<std::string, Tensor>& out);
};

/// Per-token binary image-region masks derived from the attention map:
/// token i admits position j iff M[j,i] >= alpha * max_row M[.,i].
struct TokenMasks {
  std::vector<int> token_cols;            // caption positions of non-PAD tokens
  std::vector<std::vector<char>> masks;   // [tokens][n_x], values 0/1
  std::vector<double> eta;                // per-token threshold
};

TokenMasks build_masks(const AttentionMap& map, double alpha);

/// Text-gated mixture of experts: each non-PAD caption token routes to one
/// expert, which is applied to the token's masked image rows; results are
/// averaged over the non-PAD token count. Output is pre-residual.
class SpaceMoE {
 public:
  SpaceMoE(int d, int d_y, int k, int expert_hidden, int gate_hidden);

  /// Routing decisions are reported to `sink` (when non-null) as
  /// (t, block, caption position, expert).
  Tensor forward(const Tensor& h_prime, const Tensor& text, const AttentionMap& map,
                 double alpha, double noise_scale, bool train_mode, RandomStream& rng,
                 RouteSink* sink = nullptr, int block = 0, int t = 0) const;

  /// Switch-style load-balance penalty, k * sum_j f_j p_j, where f_j is the
  /// routed fraction and p_j the mean gate probability. Differentiable in
  /// the gate parameters; zero-weight by default in training configs.
  Tensor balance_loss(const Tensor& text, const std::vector<bool>& pad_cols,
                      double noise_scale, bool train_mode, RandomStream& rng) const;

  int experts() const { return static_cast<int>(experts_.size()); }
  GateNetwork& gate() { return gate_; }
  const GateNetwork& gate() const { return gate_; }
  FeedForwardExpert& expert(int i) { return experts_[static_cast<std::size_t>(i)]; }

  /// Gate first, then experts in index order.
  void init(RandomStream& rng);
  void collect_params(const std::string& prefix, std::map<std::string, Tensor>& out);

 private:
  GateNetwork gate_;
  std::vector<FeedForwardExpert> experts_;
};

}  // namespace moediff
