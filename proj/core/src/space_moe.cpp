// SPDX-License-Identifier: Apache-2.0
#include "moediff/space_moe.hpp"

#include <algorithm>
#include <cmath>

#include "moediff/errors.hpp"

namespace moediff {

FeedForwardExpert::FeedForwardExpert(int d, int hidden)
    : w_in({d, hidden}), w_out({hidden, d}) {
  if (d < 1 || hidden < 1) throw ConfigError("expert: dims must be positive");
}

Tensor FeedForwardExpert::forward(const Tensor& x) const {
  return add(x, matmul(gelu(matmul(x, w_in)), w_out));
}

void FeedForwardExpert::init(RandomStream& rng) {
  rng.fill_uniform_signed(w_in.data(), 1.0 / std::sqrt(static_cast<double>(w_in.dim(0))));
  rng.fill_uniform_signed(w_out.data(),
                          1.0 / std::sqrt(static_cast<double>(w_out.dim(0))));
}

void FeedForwardExpert::collect_params(const std::string& prefix,
                                       std::map<std::string, Tensor>& out) {
  out.emplace(prefix + "w_in", w_in);
  out.emplace(prefix + "w_out", w_out);
}

GateNetwork::GateNetwork(int in, int hidden, int out)
    : w1({in, hidden}), b1({hidden}), w2({hidden, out}), b2({out}) {
  if (in < 1 || hidden < 1 || out < 1) throw ConfigError("gate: dims must be positive");
}

std::vector<double> GateNetwork::logits(const std::vector<double>& input) const {
  if (static_cast<int>(input.size()) != w1.dim(0)) {
    throw DimensionError("gate: input size " + std::to_string(input.size()) +
                         " does not match " + w1.shape_str());
  }
  const int hidden = w1.dim(1), out = w2.dim(1);
  std::vector<double> h(static_cast<std::size_t>(hidden));
  for (int j = 0; j < hidden; ++j) {
    double acc = b1.at(j);
    for (int i = 0; i < w1.dim(0); ++i) acc += input[static_cast<std::size_t>(i)] * w1.at(i, j);
    constexpr double kRoot2OverPi = 0.7978845608028654;
    h[static_cast<std::size_t>(j)] =
        0.5 * acc * (1.0 + std::tanh(kRoot2OverPi * (acc + 0.044715 * acc * acc * acc)));
  }
  std::vector<double> z(static_cast<std::size_t>(out));
  for (int j = 0; j < out; ++j) {
    double acc = b2.at(j);
    for (int i = 0; i < hidden; ++i) acc += h[static_cast<std::size_t>(i)] * w2.at(i, j);
    z[static_cast<std::size_t>(j)] = acc;
  }
  return z;
}

int GateNetwork::route(const std::vector<double>& input, double noise_scale,
                       bool train_mode, RandomStream& rng) const {
  std::vector<double> z = logits(input);
  if (train_mode && noise_scale > 0.0) {
    for (auto& v : z) v += noise_scale * rng.normal();
  }
  // Softmax before the argmax, as routed; monotonicity makes it equal to the
  // raw argmax, which tests assert.
  const double mx = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (auto& v : z) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (auto& v : z) v /= denom;
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

void GateNetwork::init(RandomStream& rng) {
  rng.fill_uniform_signed(w1.data(), 1.0 / std::sqrt(static_cast<double>(w1.dim(0))));
  rng.fill_uniform_signed(w2.data(), 1.0 / std::sqrt(static_cast<double>(w2.dim(0))));
}

void GateNetwork::collect_params(const std::string& prefix,
                                 std::map<std::string, Tensor>& out) {
  out.emplace(prefix + "w1", w1);
  out.emplace(prefix + "b1", b1);
  out.emplace(prefix + "w2", w2);
  out.emplace(prefix + "b2", b2);
}

TokenMasks build_masks(const AttentionMap& map, double alpha) {
  if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("build_masks: alpha must be in (0,1]");
  const int n_x = map.map.dim(0), n_y = map.map.dim(1);
  if (static_cast<int>(map.pad_cols.size()) != n_y) {
    throw DimensionError("build_masks: pad mask does not match map columns");
  }
  TokenMasks result;
  for (int col = 0; col < n_y; ++col) {
    if (map.pad_cols[static_cast<std::size_t>(col)]) continue;
    double mx = 0.0;
    for (int row = 0; row < n_x; ++row) mx = std::max(mx, map.map.at(row, col));
    const double eta = alpha * mx;
    std::vector<char> mask(static_cast<std::size_t>(n_x));
    for (int row = 0; row < n_x; ++row) {
      mask[static_cast<std::size_t>(row)] = map.map.at(row, col) >= eta ? 1 : 0;
    }
    result.token_cols.push_back(col);
    result.masks.push_back(std::move(mask));
    result.eta.push_back(eta);
  }
  return result;
}

SpaceMoE::SpaceMoE(int d, int d_y, int k, int expert_hidden, int gate_hidden)
    : gate_(d_y, gate_hidden, k) {
  if (k < 1) throw ConfigError("space moe: need at least one expert");
  for (int i = 0; i < k; ++i) experts_.emplace_back(d, expert_hidden);
}

Tensor SpaceMoE::forward(const Tensor& h_prime, const Tensor& text,
                         const AttentionMap& map, double alpha, double noise_scale,
                         bool train_mode, RandomStream& rng, RouteSink* sink, int block,
                         int t) const {
  const int n_x = h_prime.dim(0);
  if (map.map.dim(0) != n_x || map.map.dim(1) != text.dim(0)) {
    throw DimensionError("space moe: map " + map.map.shape_str() +
                         " does not link h " + h_prime.shape_str() + " and text " +
                         text.shape_str());
  }
  TokenMasks masks = build_masks(map, alpha);
  const int tokens = static_cast<int>(masks.token_cols.size());
  if (tokens == 0) throw ContractError("space moe: caption is all PAD");

  // Route every non-PAD token. Routing reads the text encoding as plain
  // numbers; the argmax admits no gradient, so nothing goes on the tape.
  std::vector<int> routes(static_cast<std::size_t>(tokens));
  {
    Tape::NoGradGuard guard;
    const int d_y = text.dim(1);
    for (int i = 0; i < tokens; ++i) {
      const int col = masks.token_cols[static_cast<std::size_t>(i)];
      std::vector<double> row(static_cast<std::size_t>(d_y));
      for (int j = 0; j < d_y; ++j) row[static_cast<std::size_t>(j)] = text.at(col, j);
      routes[static_cast<std::size_t>(i)] = gate_.route(row, noise_scale, train_mode, rng);
      if (sink) sink->space_route(t, block, col, routes[static_cast<std::size_t>(i)]);
    }
  }

  // Because e(0) == 0, summing e_r(i)(h' o mask_i) over tokens collapses to
  // one expert application per *distinct* routed expert, weighted per row by
  // how many of its tokens admit that row. Cost grows with the number of
  // engaged experts, not the token count.
  Tensor out;
  bool first = true;
  for (int ex = 0; ex < experts(); ++ex) {
    std::vector<double> weights(static_cast<std::size_t>(n_x), 0.0);
    bool used = false;
    for (int i = 0; i < tokens; ++i) {
      if (routes[static_cast<std::size_t>(i)] != ex) continue;
      used = true;
      const auto& mask = masks.masks[static_cast<std::size_t>(i)];
      for (int row = 0; row < n_x; ++row) {
        weights[static_cast<std::size_t>(row)] += mask[static_cast<std::size_t>(row)];
      }
    }
    if (!used) continue;
    for (auto& w : weights) w /= tokens;
    Tensor term = scale_rows(experts_[static_cast<std::size_t>(ex)].forward(h_prime), weights);
    out = first ? term : add(out, term);
    first = false;
  }
  return out;
}

Tensor SpaceMoE::balance_loss(const Tensor& text, const std::vector<bool>& pad_cols,
                              double noise_scale, bool train_mode,
                              RandomStream& rng) const {
  const int n_y = text.dim(0);
  const int k = experts();
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  int tokens = 0;
  std::vector<int> cols;
  {
    Tape::NoGradGuard guard;
    for (int col = 0; col < n_y; ++col) {
      if (pad_cols[static_cast<std::size_t>(col)]) continue;
      std::vector<double> row(static_cast<std::size_t>(text.dim(1)));
      for (int j = 0; j < text.dim(1); ++j) row[static_cast<std::size_t>(j)] = text.at(col, j);
      counts[static_cast<std::size_t>(gate_.route(row, noise_scale, train_mode, rng))]++;
      cols.push_back(col);
      ++tokens;
    }
  }
  if (tokens == 0) throw ContractError("balance loss: caption is all PAD");

  Tensor rows = take_rows(text, cols);
  Tensor hidden = gelu(add_rowwise(matmul(rows, gate_.w1), gate_.b1));
  Tensor probs = softmax_rows(add_rowwise(matmul(hidden, gate_.w2), gate_.b2));
  Tensor mean_probs = affine(matmul(Tensor({1, tokens}, 1.0), probs),
                             1.0 / tokens, 0.0);  // [1, k]
  std::vector<double> fractions(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    fractions[static_cast<std::size_t>(j)] =
        static_cast<double>(counts[static_cast<std::size_t>(j)]) / tokens;
  }
  Tensor f = Tensor::from_data({1, k}, fractions);
  return affine(sum(mul(f, mean_probs)), static_cast<double>(k), 0.0);
}

void SpaceMoE::init(RandomStream& rng) {
  gate_.init(rng);
  for (auto& e : experts_) e.init(rng);
}

void SpaceMoE::collect_params(const std::string& prefix,
                              std::map<std::string, Tensor>& out) {
  gate_.collect_params(prefix + "gate.", out);
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    experts_[i].collect_params(prefix + "expert" + std::to_string(i) + ".", out);
  }
}

}  // namespace moediff
