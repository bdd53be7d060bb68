// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "moediff/attention.hpp"
#include "moediff/checkpoint.hpp"
#include "moediff/edge.hpp"
#include "moediff/random.hpp"
#include "moediff/routes.hpp"
#include "moediff/space_moe.hpp"
#include "moediff/tensor.hpp"
#include "moediff/text_encoder.hpp"
#include "moediff/time_moe.hpp"

namespace moediff {

/// Hyperparameters of the denoiser stack. Defaults are the desk-scale
/// configuration. validate() throws one ConfigError naming every violated
/// field at once.
struct ModelConfig {
  int blocks = 4;
  int d = 64;    // image-token width
  int d_y = 32;  // caption-token width
  int n_y = 16;  // caption length in ids, PAD-filled
  int vocab = 21;
  int space_experts = 6;
  int time_experts = 4;
  int heads = 1;
  int T = 1000;
  int t_c = 500;      // edge supervision active while t <= t_c
  double alpha = 0.2; // mask threshold fraction
  int patch = 4;
  int channels = 3;
  int d_t = 32;  // timestep embedding width
  int expert_hidden_mult = 4;
  int gate_hidden = 32;
  int max_height = 52;  // bounds the learned position table
  int max_width = 52;
  int edge_layers = 5;
  int edge_channels = 8;
  int edge_kernel = 3;
  bool edge_per_block = true;  // false: head on block 0 only (ablation)
  double gate_noise = 0.0;
  int stages = 1;  // reserved for a hierarchical backbone
  FocalParams focal;

  int expert_hidden() const { return d * expert_hidden_mult; }
  int grid_h() const { return max_height / patch; }
  int grid_w() const { return max_width / patch; }
  void validate() const;
};

struct ForwardResult {
  Tensor eps_hat;                  // [c, h, w], same shape as the input
  std::vector<AttentionMap> maps;  // one cross-attention map per block
  int h_f = 0, w_f = 0;            // feature-grid dims for this input
};

/// One transformer block: self-attention, cross-attention (exporting its
/// map), time-MoE, space-MoE, each added residually. Blocks that carry edge
/// supervision own an EdgeHead.
struct Block {
  AttentionParams self_p;
  AttentionParams cross_p;
  TimeMoE time_moe;
  SpaceMoE space_moe;
  std::vector<EdgeHead> edge;  // zero or one head

  Block(const ModelConfig& cfg, bool with_edge_head);
};

/// The full denoiser: patch embedding with learned positions and a projected
/// timestep embedding, a stack of Blocks, and a linear head back to pixel
/// patches. All parameters come from one seeded stream in construction order.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  /// x_t is [channels, h, w] with h, w multiples of patch and within the
  /// position-table bounds; caption is n_y ids. Routing decisions go to
  /// `sink` when non-null.
  ForwardResult forward(const Tensor& x_t, int t, const std::vector<int>& caption,
                        bool train_mode, RandomStream& rng,
                        RouteSink* sink = nullptr) const;

  /// Sum of per-block edge losses for maps produced by forward(). Exact zero
  /// when t > t_c.
  Tensor edge_losses(const std::vector<AttentionMap>& maps, const Tensor& edge_target,
                     int t, int h_f, int w_f) const;

  /// Mean over blocks of the space-gate load-balance penalty for this
  /// caption.
  Tensor balance_losses(const std::vector<int>& caption, bool train_mode,
                        RandomStream& rng) const;

  /// Every trainable tensor under a stable dotted name.
  NamedTensors params();
  std::size_t param_count();

  const ModelConfig& config() const { return cfg_; }
  TextEncoder& text_encoder() { return text_; }
  Block& block(int i) { return blocks_[static_cast<std::size_t>(i)]; }

 private:
  ModelConfig cfg_;
  TextEncoder text_;
  Tensor embed_w_, embed_b_;  // [c*p*p, d], [d]
  Tensor pos_table_;          // [grid_h*grid_w, d]
  Tensor time_w_, time_b_;    // [d_t, d], [d]
  std::vector<Block> blocks_;
  Tensor head_w_, head_b_;    // [d, c*p*p], [c*p*p]

  void init(std::uint64_t seed);
};

}  // namespace moediff
