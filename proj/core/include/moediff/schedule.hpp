// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace moediff {

enum class SigmaMode {
  kSqrtBeta,   // sigma_t = sqrt(beta_t)
  kPosterior,  // sigma_t = sqrt((1 - abar_{t-1}) / (1 - abar_t) * beta_t)
};

/// Per-timestep noise tables, 1-indexed by convention: accessors take
/// t in [1, T], and alpha_bar(0) == 1 (the clean-data limit).
class NoiseSchedule {
 public:
  static NoiseSchedule linear(int T, double beta_start, double beta_end,
                              SigmaMode mode = SigmaMode::kSqrtBeta);
  /// Builds from explicit betas; lets tests pin exact alpha_bar values.
  static NoiseSchedule from_betas(std::vector<double> betas,
                                  SigmaMode mode = SigmaMode::kSqrtBeta);

  int T() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const;
  double alpha(int t) const;
  /// alpha_bar(0) == 1.
  double alpha_bar(int t) const;
  double sigma(int t) const;

 private:
  NoiseSchedule() = default;
  void check_t(int t, int lowest) const;

  std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
};

}  // namespace moediff
