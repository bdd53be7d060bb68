// SPDX-License-Identifier: Apache-2.0
#include "moediff/schedule.hpp"

#include <cmath>
#include <string>

#include "moediff/errors.hpp"

namespace moediff {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end,
                                    SigmaMode mode) {
  if (T < 2) throw ConfigError("schedule: T must be >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    betas[static_cast<std::size_t>(t)] =
        beta_start + (beta_end - beta_start) * t / (T - 1);
  }
  return from_betas(std::move(betas), mode);
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, SigmaMode mode) {
  if (betas.empty()) throw ConfigError("schedule: empty beta list");
  NoiseSchedule s;
  s.beta_ = std::move(betas);
  double abar = 1.0;
  for (double b : s.beta_) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule: betas must lie in (0,1)");
    const double a = 1.0 - b;
    const double prev_abar = abar;
    abar *= a;
    s.alpha_.push_back(a);
    s.alpha_bar_.push_back(abar);
    s.sigma_.push_back(mode == SigmaMode::kSqrtBeta
                           ? std::sqrt(b)
                           : std::sqrt((1.0 - prev_abar) / (1.0 - abar) * b));
  }
  return s;
}

void NoiseSchedule::check_t(int t, int lowest) const {
  if (t < lowest || t > T()) {
    throw ContractError("schedule: t=" + std::to_string(t) + " outside [" +
                        std::to_string(lowest) + ", " + std::to_string(T()) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check_t(t, 1);
  return beta_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
  check_t(t, 1);
  return alpha_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_t(t, 0);
  return t == 0 ? 1.0 : alpha_bar_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::sigma(int t) const {
  check_t(t, 1);
  return sigma_[static_cast<std::size_t>(t - 1)];
}

}  // namespace moediff
