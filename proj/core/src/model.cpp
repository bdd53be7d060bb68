// SPDX-License-Identifier: Apache-2.0
#include "moediff/model.hpp"

#include <cmath>
#include <sstream>

#include "moediff/errors.hpp"

namespace moediff {

void ModelConfig::validate() const {
  std::ostringstream bad;
  auto req = [&bad](bool ok, const char* what) {
    if (!ok) bad << (bad.tellp() > 0 ? "; " : "") << what;
  };
  req(blocks >= 1, "blocks must be >= 1");
  req(d >= 1, "d must be >= 1");
  req(d_y >= 1, "d_y must be >= 1");
  req(n_y >= 1, "n_y must be >= 1");
  req(vocab >= 2, "vocab must be >= 2");
  req(space_experts >= 1, "space_experts must be >= 1");
  req(time_experts >= 1, "time_experts must be >= 1");
  req(heads >= 1, "heads must be >= 1");
  req(heads < 1 || d % heads == 0, "d must be divisible by heads");
  req(T >= 2, "T must be >= 2");
  req(t_c >= 0 && t_c <= T, "t_c must lie in [0, T]");
  req(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
  req(patch >= 1, "patch must be >= 1");
  req(channels >= 1, "channels must be >= 1");
  req(d_t >= 2 && d_t % 2 == 0, "d_t must be even and >= 2");
  req(expert_hidden_mult >= 1, "expert_hidden_mult must be >= 1");
  req(gate_hidden >= 1, "gate_hidden must be >= 1");
  req(max_height >= patch && max_height % patch == 0,
      "max_height must be a positive multiple of patch");
  req(max_width >= patch && max_width % patch == 0,
      "max_width must be a positive multiple of patch");
  req(edge_layers >= 1, "edge_layers must be >= 1");
  req(edge_channels >= 1, "edge_channels must be >= 1");
  req(edge_kernel >= 1 && edge_kernel % 2 == 1, "edge_kernel must be odd and >= 1");
  req(gate_noise >= 0.0, "gate_noise must be >= 0");
  req(stages == 1, "stages other than 1 are reserved");
  req(focal.alpha_f > 0.0 && focal.alpha_f < 1.0, "focal alpha_f must lie in (0, 1)");
  req(focal.gamma >= 0.0, "focal gamma must be >= 0");
  if (bad.tellp() > 0) throw ConfigError("model config: " + bad.str());
}

Block::Block(const ModelConfig& cfg, bool with_edge_head)
    : self_p{Tensor({cfg.d, cfg.d}), Tensor({cfg.d, cfg.d}), Tensor({cfg.d, cfg.d})},
      cross_p{Tensor({cfg.d, cfg.d}), Tensor({cfg.d_y, cfg.d}),
              Tensor({cfg.d_y, cfg.d})},
      time_moe(cfg.d, cfg.d_t, cfg.time_experts, cfg.expert_hidden(), cfg.gate_hidden),
      space_moe(cfg.d, cfg.d_y, cfg.space_experts, cfg.expert_hidden(),
                cfg.gate_hidden) {
  if (with_edge_head) {
    edge.emplace_back(cfg.edge_layers, cfg.edge_channels, cfg.edge_kernel);
  }
}

namespace {
const ModelConfig& checked(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(checked(cfg)),
      text_(cfg.vocab, cfg.n_y, cfg.d_y),
      embed_w_({cfg.channels * cfg.patch * cfg.patch, cfg.d}),
      embed_b_({cfg.d}),
      pos_table_({cfg.grid_h() * cfg.grid_w(), cfg.d}),
      time_w_({cfg.d_t, cfg.d}),
      time_b_({cfg.d}),
      head_w_({cfg.d, cfg.channels * cfg.patch * cfg.patch}),
      head_b_({cfg.channels * cfg.patch * cfg.patch}) {
  blocks_.reserve(static_cast<std::size_t>(cfg.blocks));
  for (int b = 0; b < cfg.blocks; ++b) {
    blocks_.emplace_back(cfg, cfg.edge_per_block || b == 0);
  }
  init(seed);
  for (auto& [name, tensor] : params()) {
    (void)name;
    tensor.set_requires_grad(true);
  }
}

void Model::init(std::uint64_t seed) {
  RandomStream rng(seed);
  auto fan_in = [&rng](Tensor& w) {
    rng.fill_uniform_signed(w.data(), 1.0 / std::sqrt(static_cast<double>(w.dim(0))));
  };
  text_.init(rng);
  fan_in(embed_w_);
  fan_in(pos_table_);  // rows scaled like a d-wide fan-in
  fan_in(time_w_);
  for (auto& blk : blocks_) {
    fan_in(blk.self_p.wq);
    fan_in(blk.self_p.wk);
    fan_in(blk.self_p.wv);
    fan_in(blk.cross_p.wq);
    fan_in(blk.cross_p.wk);
    fan_in(blk.cross_p.wv);
    blk.time_moe.init(rng);
    blk.space_moe.init(rng);
    for (auto& head : blk.edge) head.init(rng);
  }
  fan_in(head_w_);
}

ForwardResult Model::forward(const Tensor& x_t, int t, const std::vector<int>& caption,
                             bool train_mode, RandomStream& rng,
                             RouteSink* sink) const {
  if (x_t.rank() != 3 || x_t.dim(0) != cfg_.channels) {
    throw DimensionError("forward: expected [" + std::to_string(cfg_.channels) +
                         ", h, w] input, got " + x_t.shape_str());
  }
  const int h = x_t.dim(1), w = x_t.dim(2);
  if (h % cfg_.patch != 0 || w % cfg_.patch != 0) {
    throw DimensionError("forward: image dims must be multiples of patch");
  }
  const int h_f = h / cfg_.patch, w_f = w / cfg_.patch;
  if (h_f > cfg_.grid_h() || w_f > cfg_.grid_w()) {
    throw DimensionError("forward: image exceeds the position-table bounds");
  }
  if (t < 1 || t > cfg_.T) {
    throw ContractError("forward: t outside [1, T]");
  }

  std::vector<int> pos_ids(static_cast<std::size_t>(h_f) * w_f);
  for (int gi = 0; gi < h_f; ++gi) {
    for (int gj = 0; gj < w_f; ++gj) {
      pos_ids[static_cast<std::size_t>(gi) * w_f + gj] = gi * cfg_.grid_w() + gj;
    }
  }

  Tensor tokens = patchify(x_t, cfg_.patch);
  Tensor hc = add(add_rowwise(matmul(tokens, embed_w_), embed_b_),
                  take_rows(pos_table_, pos_ids));
  Tensor temb = reshape(time_embed(t, cfg_.d_t), {1, cfg_.d_t});
  Tensor trow = add(reshape(matmul(temb, time_w_), {cfg_.d}), time_b_);
  hc = add_rowwise(hc, trow);

  Tensor text = text_.encode(caption);
  const std::vector<bool> pad = text_.pad_mask(caption, cfg_.vocab - 1);

  ForwardResult result;
  result.h_f = h_f;
  result.w_f = w_f;
  result.maps.reserve(blocks_.size());
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Block& blk = blocks_[b];
    hc = add(hc, self_attention(hc, blk.self_p, cfg_.heads));
    CrossAttentionResult cross = cross_attention(hc, text, blk.cross_p, pad, cfg_.heads);
    hc = add(hc, cross.out);
    result.maps.push_back(cross.map);
    hc = add(hc, blk.time_moe.forward(hc, t, cfg_.gate_noise, train_mode, rng, sink,
                                      static_cast<int>(b)));
    hc = add(hc, blk.space_moe.forward(hc, text, cross.map, cfg_.alpha, cfg_.gate_noise,
                                       train_mode, rng, sink, static_cast<int>(b), t));
  }

  Tensor out_tokens = add_rowwise(matmul(hc, head_w_), head_b_);
  result.eps_hat = unpatchify(out_tokens, cfg_.channels, h, w, cfg_.patch);
  return result;
}

Tensor Model::edge_losses(const std::vector<AttentionMap>& maps,
                          const Tensor& edge_target, int t, int h_f, int w_f) const {
  if (maps.size() != blocks_.size()) {
    throw DimensionError("edge_losses: expected one map per block");
  }
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    if (blocks_[b].edge.empty()) continue;
    total = add(total, edge_loss(maps[b], edge_target, t, cfg_.t_c,
                                 blocks_[b].edge.front(), cfg_.focal, h_f, w_f));
  }
  return total;
}

Tensor Model::balance_losses(const std::vector<int>& caption, bool train_mode,
                             RandomStream& rng) const {
  Tensor text = text_.encode(caption);
  const std::vector<bool> pad = text_.pad_mask(caption, cfg_.vocab - 1);
  Tensor total = Tensor::scalar(0.0);
  for (const Block& blk : blocks_) {
    total = add(total, blk.space_moe.balance_loss(text, pad, cfg_.gate_noise,
                                                  train_mode, rng));
  }
  return affine(total, 1.0 / static_cast<double>(blocks_.size()), 0.0);
}

NamedTensors Model::params() {
  NamedTensors out;
  text_.collect_params("text.", out);
  out.emplace("embed.w", embed_w_);
  out.emplace("embed.b", embed_b_);
  out.emplace("pos_table", pos_table_);
  out.emplace("time.w", time_w_);
  out.emplace("time.b", time_b_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block" + std::to_string(b) + ".";
    Block& blk = blocks_[b];
    out.emplace(p + "self.wq", blk.self_p.wq);
    out.emplace(p + "self.wk", blk.self_p.wk);
    out.emplace(p + "self.wv", blk.self_p.wv);
    out.emplace(p + "cross.wq", blk.cross_p.wq);
    out.emplace(p + "cross.wk", blk.cross_p.wk);
    out.emplace(p + "cross.wv", blk.cross_p.wv);
    blk.time_moe.collect_params(p + "time.", out);
    blk.space_moe.collect_params(p + "space.", out);
    for (auto& head : blk.edge) head.collect_params(p + "edge.", out);
  }
  out.emplace("head.w", head_w_);
  out.emplace("head.b", head_b_);
  return out;
}

std::size_t Model::param_count() {
  std::size_t n = 0;
  for (const auto& [name, tensor] : params()) {
    (void)name;
    n += tensor.size();
  }
  return n;
}

}  // namespace moediff
