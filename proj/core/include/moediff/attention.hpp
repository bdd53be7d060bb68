// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "moediff/tensor.hpp"

namespace moediff {

/// Cross-attention weights linking image positions (rows) to caption tokens
/// (columns). PAD columns hold exact zeros; every row sums to 1 over the
/// remaining columns. With several heads this is the head-averaged map.
struct AttentionMap {
  Tensor map;                  // [n_x, n_y]
  std::vector<bool> pad_cols;  // true where the caption token is PAD
};

/// Projections for one attention layer. For self-attention all three are
/// d x d; for cross-attention wq is d x d and wk, wv are d_y x d.
struct AttentionParams {
  Tensor wq, wk, wv;
};

struct CrossAttentionResult {
  Tensor out;  // [n_x, d]
  AttentionMap map;
};

/// softmax(Q K^T / sqrt(d_head)) V against the caption encoding, with PAD
/// columns excluded from the softmax. Heads partition the projection columns;
/// per-head outputs are concatenated and per-head maps averaged.
CrossAttentionResult cross_attention(const Tensor& h, const Tensor& text,
                                     const AttentionParams& params,
                                     const std::vector<bool>& pad_cols, int heads = 1);

/// Same computation with Q, K, V all drawn from h and no column masking.
Tensor self_attention(const Tensor& h, const AttentionParams& params, int heads = 1);

}  // namespace moediff
