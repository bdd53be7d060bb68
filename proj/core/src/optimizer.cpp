// SPDX-License-Identifier: Apache-2.0
#include "moediff/optimizer.hpp"

#include <cmath>

#include "moediff/errors.hpp"

namespace moediff {

AdamW::AdamW(NamedTensors params, OptimConfig cfg)
    : params_(std::move(params)), step_count_(Tensor::scalar(0.0)), cfg_(cfg) {
  if (cfg_.lr < 0.0 || cfg_.eps <= 0.0 || cfg_.warmup < 1 || cfg_.weight_decay < 0.0 ||
      cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw ConfigError("optimizer: lr/wd >= 0, eps > 0, warmup >= 1, betas in [0,1)");
  }
  for (const auto& [name, p] : params_) {
    m_.emplace(name, Tensor(p.shape()));
    v_.emplace(name, Tensor(p.shape()));
  }
}

long long AdamW::steps() const { return std::llround(step_count_.value()); }

double AdamW::lr_at(long long s) const {
  if (s <= cfg_.warmup) {
    return cfg_.lr * static_cast<double>(s) / cfg_.warmup;
  }
  return cfg_.lr;
}

void AdamW::step() {
  const long long s = steps() + 1;
  step_count_.data()[0] = static_cast<double>(s);
  const double lr = lr_at(s);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s));
  for (auto& [name, p] : params_) {
    if (!p.requires_grad()) continue;
    const std::vector<double>& g = p.grad();
    std::vector<double>& m = m_.at(name).data();
    std::vector<double>& v = v_.at(name).data();
    std::vector<double>& w = p.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      w[i] -= lr * (update + cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [name, p] : params_) {
    (void)name;
    if (p.requires_grad()) p.zero_grad();
  }
}

NamedTensors AdamW::state_tensors() {
  NamedTensors out;
  for (auto& [name, t] : m_) out.emplace("opt." + name + ".m", t);
  for (auto& [name, t] : v_) out.emplace("opt." + name + ".v", t);
  out.emplace("opt.step", step_count_);
  return out;
}

}  // namespace moediff
