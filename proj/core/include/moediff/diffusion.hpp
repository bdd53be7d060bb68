// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "moediff/schedule.hpp"
#include "moediff/tensor.hpp"

namespace moediff {

/// Forward corruption: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

/// One ancestral reverse step,
///   x_{t-1} = (x_t - (1-alpha_t)/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t)
///             + sigma_t * z.
/// At t == 1 the caller must pass z == 0.
Tensor ddpm_step(const Tensor& x_t, int t, const Tensor& eps_hat, const Tensor& z,
                 const NoiseSchedule& s);

/// Deterministic (eta = 0) step to t_prev < t via the x0 estimate:
///   x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t)
///   x_{t_prev} = sqrt(abar_{t_prev}) x0_hat + sqrt(1-abar_{t_prev}) eps_hat.
/// t_prev == 0 returns x0_hat itself.
Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& eps_hat,
                 const NoiseSchedule& s);

/// Guidance extrapolation: eps_uncond + w (eps_cond - eps_uncond).
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w);

/// Mean squared error, the denoising objective given a prediction.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace moediff
