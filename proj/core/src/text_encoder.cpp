// SPDX-License-Identifier: Apache-2.0
#include "moediff/text_encoder.hpp"

#include <cmath>

#include "moediff/errors.hpp"
#include "moediff/random.hpp"

namespace moediff {

TextEncoder::TextEncoder(int vocab_size, int n_y, int d_y)
    : n_y_(n_y),
      d_y_(d_y),
      embedding_({vocab_size, d_y}),
      pos_({n_y, d_y}) {
  if (vocab_size < 2 || n_y < 1 || d_y < 1) {
    throw ConfigError("text encoder: need vocab >= 2, n_y >= 1, d_y >= 1");
  }
}

Tensor TextEncoder::encode(const std::vector<int>& caption) const {
  if (static_cast<int>(caption.size()) != n_y_) {
    throw DimensionError("encode: caption has " + std::to_string(caption.size()) +
                         " tokens, expected " + std::to_string(n_y_));
  }
  return add(take_rows(embedding_, caption), pos_);
}

std::vector<bool> TextEncoder::pad_mask(const std::vector<int>& caption,
                                        int pad_id) const {
  std::vector<bool> mask(caption.size());
  for (std::size_t i = 0; i < caption.size(); ++i) mask[i] = caption[i] == pad_id;
  return mask;
}

void TextEncoder::init(RandomStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_y_));
  rng.fill_uniform_signed(embedding_.data(), bound);
  rng.fill_uniform_signed(pos_.data(), bound);
}

void TextEncoder::collect_params(const std::string& prefix,
                                 std::map<std::string, Tensor>& out) {
  out.emplace(prefix + "embedding", embedding_);
  out.emplace(prefix + "pos", pos_);
}

}  // namespace moediff
