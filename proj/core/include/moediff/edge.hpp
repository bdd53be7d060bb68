// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "moediff/attention.hpp"
#include "moediff/tensor.hpp"

namespace moediff {

struct FocalParams {
  double alpha_f = 0.5;
  double gamma = 2.0;
};

/// Deterministic edge target: grayscale mean over channels, Sobel gradient
/// magnitude with replicated borders, then thresholding at
/// `threshold_frac * max magnitude`. A constant image yields all zeros.
Tensor edge_oracle(const Tensor& image, double threshold_frac = 0.25);

/// Column 0 of the attention map (the pooled SUMMARY token) reshaped onto the
/// feature grid. No renormalization; stays on the autodiff graph.
Tensor pooled_attention_image(const AttentionMap& map, int h_f, int w_f);

/// Block max-pool of a binary map down to (h_f, w_f); factors must divide the
/// input dims. Used to bring the edge target to feature resolution, where max
/// keeps sparse positives alive.
Tensor downsample_max(const Tensor& edge, int h_f, int w_f);

/// Binary focal loss, mean over pixels: with q = sigmoid(logit),
///   positives contribute -alpha_f * (1-q)^gamma * log(q)
///   negatives contribute -(1-alpha_f) * q^gamma * log(1-q)
/// log arguments are clamped at 1e-12. Throws ContractError on a non-binary
/// target.
Tensor focal_loss(const Tensor& logits, const Tensor& target, const FocalParams& p);

/// Stack of N same-size convolutions (GELU between, none after the last)
/// mapping the 1-channel pooled-attention image to per-pixel edge logits.
class EdgeHead {
 public:
  /// Kernels are `kernel x kernel`, hidden layers carry `channels` channels.
  EdgeHead(int layers, int channels, int kernel);

  Tensor forward(const Tensor& pooled) const;  // [1,h,w] -> [1,h,w]

  /// Kernels U(+-1/sqrt(c_in * k * k)), biases stay zero.
  void init(class RandomStream& rng);

  /// Registers parameters under names "<prefix>conv<i>.k" / ".b".
  void collect_params(const std::string& prefix, std::map<std::string, Tensor>& out);

 private:
  std::vector<Tensor> kernels_, biases_;
};

/// L_edge for one block: exactly zero (detached constant) when t > t_c, else
/// the focal loss of the head's prediction on the pooled-attention image
/// against the max-pooled edge target.
Tensor edge_loss(const AttentionMap& map, const Tensor& edge_target, int t, int t_c,
                 const EdgeHead& head, const FocalParams& p, int h_f, int w_f);

}  // namespace moediff
