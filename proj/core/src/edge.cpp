// SPDX-License-Identifier: Apache-2.0
#include "moediff/edge.hpp"

#include <algorithm>
#include <cmath>

#include "moediff/errors.hpp"
#include "moediff/random.hpp"

namespace moediff {

Tensor edge_oracle(const Tensor& image, double threshold_frac) {
  if (image.rank() != 3) {
    throw DimensionError("edge_oracle: need [c,h,w], got " + image.shape_str());
  }
  if (threshold_frac <= 0.0 || threshold_frac > 1.0) {
    throw ConfigError("edge_oracle: threshold fraction must be in (0,1]");
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<double> gray(static_cast<std::size_t>(h) * w, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) gray[static_cast<std::size_t>(y) * w + x] += image.at(ch, y, x);
  for (auto& g : gray) g /= c;

  auto sample = [&](int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return gray[static_cast<std::size_t>(y) * w + x];
  };

  std::vector<double> mag(gray.size());
  double max_mag = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = sample(y - 1, x + 1) + 2.0 * sample(y, x + 1) + sample(y + 1, x + 1) -
                        sample(y - 1, x - 1) - 2.0 * sample(y, x - 1) - sample(y + 1, x - 1);
      const double gy = sample(y + 1, x - 1) + 2.0 * sample(y + 1, x) + sample(y + 1, x + 1) -
                        sample(y - 1, x - 1) - 2.0 * sample(y - 1, x) - sample(y - 1, x + 1);
      const double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(y) * w + x] = m;
      max_mag = std::max(max_mag, m);
    }

  Tensor out({1, h, w});
  // Constant images leave rounding residue of order 1e-16 in the gradient
  // sums; anything below this floor is flatness, not structure.
  if (max_mag > 1e-9) {
    const double threshold = threshold_frac * max_mag;
    for (std::size_t i = 0; i < mag.size(); ++i)
      out.data()[i] = mag[i] >= threshold ? 1.0 : 0.0;
  }
  return out;
}

Tensor pooled_attention_image(const AttentionMap& map, int h_f, int w_f) {
  if (map.map.dim(0) != h_f * w_f) {
    throw DimensionError("pooled_attention_image: " + std::to_string(map.map.dim(0)) +
                         " rows cannot fill a " + std::to_string(h_f) + "x" +
                         std::to_string(w_f) + " grid");
  }
  return reshape(take_column(map.map, 0), {1, h_f, w_f});
}

Tensor downsample_max(const Tensor& edge, int h_f, int w_f) {
  if (edge.rank() != 3 || edge.dim(0) != 1) {
    throw DimensionError("downsample_max: need [1,h,w], got " + edge.shape_str());
  }
  const int h = edge.dim(1), w = edge.dim(2);
  if (h_f <= 0 || w_f <= 0 || h % h_f != 0 || w % w_f != 0) {
    throw DimensionError("downsample_max: " + std::to_string(h_f) + "x" +
                         std::to_string(w_f) + " does not tile " + std::to_string(h) +
                         "x" + std::to_string(w));
  }
  const int fy = h / h_f, fx = w / w_f;
  Tensor out({1, h_f, w_f});
  for (int y = 0; y < h_f; ++y)
    for (int x = 0; x < w_f; ++x) {
      double m = 0.0;
      for (int dy = 0; dy < fy; ++dy)
        for (int dx = 0; dx < fx; ++dx)
          m = std::max(m, edge.at(0, y * fy + dy, x * fx + dx));
      out.at(0, y, x) = m;
    }
  return out;
}

Tensor focal_loss(const Tensor& logits, const Tensor& target, const FocalParams& p) {
  if (logits.shape() != target.shape()) {
    throw DimensionError("focal_loss: logits " + logits.shape_str() + " vs target " +
                         target.shape_str());
  }
  if (p.alpha_f <= 0.0 || p.alpha_f >= 1.0 || p.gamma < 0.0) {
    throw ConfigError("focal_loss: need alpha_f in (0,1) and gamma >= 0");
  }
  for (double v : target.data()) {
    if (v != 0.0 && v != 1.0) throw ContractError("focal_loss: target is not binary");
  }

  Tensor pos = target.clone();
  Tensor neg = affine(pos, -1.0, 1.0);
  Tensor q = sigmoid(logits);
  Tensor one_minus_q = affine(q, -1.0, 1.0);

  Tensor pos_term = mul(pow_scalar(one_minus_q, p.gamma), log_clamped(q));
  Tensor neg_term = mul(pow_scalar(q, p.gamma), log_clamped(one_minus_q));
  Tensor weighted = add(affine(mul(pos, pos_term), p.alpha_f, 0.0),
                        affine(mul(neg, neg_term), 1.0 - p.alpha_f, 0.0));
  return affine(mean(weighted), -1.0, 0.0);
}

EdgeHead::EdgeHead(int layers, int channels, int kernel) {
  if (layers < 1 || channels < 1 || kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("edge head: need >=1 layers, >=1 channels, odd kernel");
  }
  for (int i = 0; i < layers; ++i) {
    const int cin = i == 0 ? 1 : channels;
    const int cout = i == layers - 1 ? 1 : channels;
    kernels_.push_back(Tensor({cout, cin, kernel, kernel}));
    biases_.push_back(Tensor({cout}));
  }
}

Tensor EdgeHead::forward(const Tensor& pooled) const {
  Tensor h = pooled;
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    const int pad = (kernels_[i].dim(2) - 1) / 2;
    h = add_channelwise(conv2d(h, kernels_[i], pad), biases_[i]);
    if (i + 1 < kernels_.size()) h = gelu(h);
  }
  return h;
}

void EdgeHead::init(RandomStream& rng) {
  for (auto& k : kernels_) {
    const double fan_in = static_cast<double>(k.dim(1)) * k.dim(2) * k.dim(3);
    rng.fill_uniform_signed(k.data(), 1.0 / std::sqrt(fan_in));
  }
}

void EdgeHead::collect_params(const std::string& prefix,
                              std::map<std::string, Tensor>& out) {
  for (std::size_t i = 0; i < kernels_.size(); ++i) {
    out.emplace(prefix + "conv" + std::to_string(i) + ".k", kernels_[i]);
    out.emplace(prefix + "conv" + std::to_string(i) + ".b", biases_[i]);
  }
}

Tensor edge_loss(const AttentionMap& map, const Tensor& edge_target, int t, int t_c,
                 const EdgeHead& head, const FocalParams& p, int h_f, int w_f) {
  if (t > t_c) return Tensor::scalar(0.0);
  Tensor pooled = pooled_attention_image(map, h_f, w_f);
  Tensor logits = head.forward(pooled);
  Tensor target = downsample_max(edge_target, h_f, w_f);
  return focal_loss(logits, target, p);
}

}  // namespace moediff
