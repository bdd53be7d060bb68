// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "moediff/tensor.hpp"
#include "moediff/vocab.hpp"

namespace moediff {

/// Learned embedding table plus learned position embeddings, trained jointly
/// with the denoiser. Row 0 of the output is the pooled SUMMARY
/// representation.
class TextEncoder {
 public:
  TextEncoder(int vocab_size, int n_y, int d_y);

  /// Caption must be exactly n_y ids; unknown ids raise a lookup error.
  Tensor encode(const std::vector<int>& caption) const;

  std::vector<bool> pad_mask(const std::vector<int>& caption, int pad_id) const;

  /// Both tables U(+-1/sqrt(d_y)).
  void init(class RandomStream& rng);

  int n_y() const { return n_y_; }
  int d_y() const { return d_y_; }

  void collect_params(const std::string& prefix, std::map<std::string, Tensor>& out);

 private:
  int n_y_, d_y_;
  Tensor embedding_;  // [V, d_y]
  Tensor pos_;        // [n_y, d_y]
};

}  // namespace moediff
