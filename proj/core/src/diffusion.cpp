// SPDX-License-Identifier: Apache-2.0
#include "moediff/diffusion.hpp"

#include <cmath>
#include <string>

#include "moediff/errors.hpp"

namespace moediff {

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  if (x0.shape() != eps.shape()) {
    throw DimensionError("q_sample: x0 " + x0.shape_str() + " vs eps " + eps.shape_str());
  }
  if (t < 1 || t > s.T()) throw ContractError("q_sample: t out of range");
  const double abar = s.alpha_bar(t);
  return add(affine(x0, std::sqrt(abar), 0.0), affine(eps, std::sqrt(1.0 - abar), 0.0));
}

Tensor ddpm_step(const Tensor& x_t, int t, const Tensor& eps_hat, const Tensor& z,
                 const NoiseSchedule& s) {
  if (x_t.shape() != eps_hat.shape() || x_t.shape() != z.shape()) {
    throw DimensionError("ddpm_step: shape mismatch");
  }
  if (t < 1 || t > s.T()) throw ContractError("ddpm_step: t out of range");
  if (t == 1) {
    for (double v : z.data()) {
      if (v != 0.0) throw ContractError("ddpm_step: z must be zero at t=1");
    }
  }
  const double alpha = s.alpha(t);
  const double coeff = (1.0 - alpha) / std::sqrt(1.0 - s.alpha_bar(t));
  Tensor mean = affine(sub(x_t, affine(eps_hat, coeff, 0.0)), 1.0 / std::sqrt(alpha), 0.0);
  return add(mean, affine(z, s.sigma(t), 0.0));
}

Tensor ddim_step(const Tensor& x_t, int t, int t_prev, const Tensor& eps_hat,
                 const NoiseSchedule& s) {
  if (x_t.shape() != eps_hat.shape()) throw DimensionError("ddim_step: shape mismatch");
  if (t < 1 || t > s.T()) throw ContractError("ddim_step: t out of range");
  if (t_prev < 0 || t_prev >= t) {
    throw ContractError("ddim_step: need 0 <= t_prev < t, got t_prev=" +
                        std::to_string(t_prev) + ", t=" + std::to_string(t));
  }
  const double abar = s.alpha_bar(t);
  const double abar_prev = s.alpha_bar(t_prev);
  Tensor x0_hat = affine(sub(x_t, affine(eps_hat, std::sqrt(1.0 - abar), 0.0)),
                         1.0 / std::sqrt(abar), 0.0);
  return add(affine(x0_hat, std::sqrt(abar_prev), 0.0),
             affine(eps_hat, std::sqrt(1.0 - abar_prev), 0.0));
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double w) {
  if (eps_cond.shape() != eps_uncond.shape()) {
    throw DimensionError("cfg_combine: shape mismatch");
  }
  return add(eps_uncond, affine(sub(eps_cond, eps_uncond), w, 0.0));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

}  // namespace moediff
