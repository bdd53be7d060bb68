// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moediff/checkpoint.hpp"
#include "moediff/tensor.hpp"

namespace moediff {

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled; 0 reduces AdamW to Adam
  int warmup = 200;           // lr ramps linearly over the first `warmup` steps
};

/// AdamW over a fixed set of named tensors. Updates walk the map in name
/// order, so trajectories are deterministic. Moment buffers and the step
/// counter are exposed as tensors for checkpointing.
class AdamW {
 public:
  AdamW(NamedTensors params, OptimConfig cfg);

  /// One update from the gradients currently on the parameters. Parameters
  /// without a gradient buffer are skipped.
  void step();
  void zero_grad();

  /// lr used by step number s (1-based): base * min(1, s / warmup).
  double lr_at(long long s) const;
  /// lr the next step() call will apply.
  double next_lr() const { return lr_at(steps() + 1); }
  long long steps() const;

  /// Moment buffers and step counter under "opt." names, aliasing live state.
  NamedTensors state_tensors();
  const OptimConfig& config() const { return cfg_; }

 private:
  NamedTensors params_;
  NamedTensors m_, v_;
  Tensor step_count_;  // scalar, stored as a double
  OptimConfig cfg_;
};

}  // namespace moediff
