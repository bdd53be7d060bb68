// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "moediff/diffusion.hpp"
#include "moediff/errors.hpp"
#include "moediff/random.hpp"
#include "moediff/schedule.hpp"
#include "moediff/trainer.hpp"

using namespace moediff;

TEST_CASE("schedule from explicit betas pins alpha_bar exactly") {
  const NoiseSchedule s = NoiseSchedule::from_betas({0.1, 4.0 / 9.0, 0.8});
  CHECK(s.T() == 3);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s.alpha_bar(2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.alpha_bar(3) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.alpha(2) == doctest::Approx(5.0 / 9.0).epsilon(1e-15));
  CHECK(s.beta(3) == 0.8);
  CHECK(s.sigma(1) == doctest::Approx(std::sqrt(0.1)));

  CHECK_THROWS_AS(s.beta(0), ContractError);
  CHECK_THROWS_AS(s.beta(4), ContractError);
  CHECK_THROWS_AS(s.alpha_bar(-1), ContractError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({}), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.0}), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({1.0}), ConfigError);
}

TEST_CASE("linear schedule endpoints and monotonicity") {
  const NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  CHECK(s.T() == 1000);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(s.beta(500) < s.beta(501));
  for (int t = 1; t < 1000; t += 97) CHECK(s.alpha_bar(t + 1) < s.alpha_bar(t));
  CHECK(s.alpha_bar(1000) > 0.0);

  CHECK_THROWS_AS(NoiseSchedule::linear(1, 1e-4, 0.02), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.02, 1e-4), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.0, 0.02), ConfigError);
}

TEST_CASE("sigma modes") {
  const NoiseSchedule sq = NoiseSchedule::from_betas({0.1, 0.2}, SigmaMode::kSqrtBeta);
  CHECK(sq.sigma(2) == doctest::Approx(std::sqrt(0.2)).epsilon(1e-15));

  const NoiseSchedule post = NoiseSchedule::from_betas({0.1, 0.2}, SigmaMode::kPosterior);
  // t=1: (1 - alpha_bar(0)) == 0, so the first posterior sigma is exactly 0.
  CHECK(post.sigma(1) == 0.0);
  const double expect2 = std::sqrt((1.0 - 0.9) / (1.0 - 0.72) * 0.2);
  CHECK(post.sigma(2) == doctest::Approx(expect2).epsilon(1e-15));
}

TEST_CASE("q_sample matches the closed form") {
  const NoiseSchedule s = NoiseSchedule::from_betas({0.19, 0.4375});  // abar: .81, .455...
  Tensor x0 = Tensor::from_data({2, 2}, {1.0, -2.0, 0.5, 3.0});
  Tensor eps = Tensor::from_data({2, 2}, {0.25, 1.0, -1.5, 0.0});
  const Tensor xt = q_sample(x0, 1, eps, s);
  for (std::size_t i = 0; i < 4; ++i) {
    const double want = 0.9 * x0.data()[i] + std::sqrt(1.0 - 0.81) * eps.data()[i];
    CHECK(xt.data()[i] == doctest::Approx(want).epsilon(1e-15));
  }
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), ContractError);
  CHECK_THROWS_AS(q_sample(x0, 1, Tensor({3}), s), DimensionError);
}

TEST_CASE("ddpm step hand check and the t=1 noise contract") {
  const NoiseSchedule s = NoiseSchedule::from_betas({0.19, 0.36});
  Tensor xt = Tensor::from_data({2}, {1.0, -0.5});
  Tensor eps_hat = Tensor::from_data({2}, {0.2, 0.1});
  Tensor z = Tensor::from_data({2}, {1.5, -2.0});

  const Tensor out = ddpm_step(xt, 2, eps_hat, z, s);
  const double abar2 = 0.81 * 0.64;
  for (int i = 0; i < 2; ++i) {
    const double mean =
        (xt.at(i) - 0.36 / std::sqrt(1.0 - abar2) * eps_hat.at(i)) / std::sqrt(0.64);
    CHECK(out.at(i) == doctest::Approx(mean + std::sqrt(0.36) * z.at(i)).epsilon(1e-14));
  }

  Tensor zero({2}, 0.0);
  CHECK_NOTHROW(ddpm_step(xt, 1, eps_hat, zero, s));
  CHECK_THROWS_AS(ddpm_step(xt, 1, eps_hat, z, s), ContractError);
}

TEST_CASE("ddim step reaches the x0 estimate at t_prev 0") {
  const NoiseSchedule s = NoiseSchedule::from_betas({0.19, 0.36, 0.5});
  Tensor xt = Tensor::from_data({3}, {0.7, -1.1, 2.0});
  Tensor eps_hat = Tensor::from_data({3}, {0.3, 0.0, -0.4});

  const double abar3 = 0.81 * 0.64 * 0.5;
  const Tensor x0_hat = ddim_step(xt, 3, 0, eps_hat, s);
  for (int i = 0; i < 3; ++i) {
    const double want = (xt.at(i) - std::sqrt(1.0 - abar3) * eps_hat.at(i)) / std::sqrt(abar3);
    CHECK(x0_hat.at(i) == doctest::Approx(want).epsilon(1e-14));
  }

  const double abar1 = 0.81;
  const Tensor x1 = ddim_step(xt, 3, 1, eps_hat, s);
  for (int i = 0; i < 3; ++i) {
    const double want =
        std::sqrt(abar1) * x0_hat.at(i) + std::sqrt(1.0 - abar1) * eps_hat.at(i);
    CHECK(x1.at(i) == doctest::Approx(want).epsilon(1e-14));
  }

  CHECK_THROWS_AS(ddim_step(xt, 2, 2, eps_hat, s), ContractError);
  CHECK_THROWS_AS(ddim_step(xt, 0, 0, eps_hat, s), ContractError);
}

TEST_CASE("ddim grid covers T down to 0 without repeats") {
  for (int T : {10, 100, 1000}) {
    for (int steps : {1, 3, 10, 50}) {
      const auto grid = ddim_grid(T, steps);
      REQUIRE_FALSE(grid.empty());
      CHECK(grid.front().first == T);
      CHECK(grid.back().second == 0);
      for (std::size_t i = 0; i < grid.size(); ++i) {
        CHECK(grid[i].second < grid[i].first);
        if (i > 0) CHECK(grid[i].first == grid[i - 1].second);
      }
      CHECK(grid.size() <= static_cast<std::size_t>(steps));
    }
  }
  const auto exact = ddim_grid(8, 4);
  REQUIRE(exact.size() == 4);
  CHECK(exact[0] == std::pair<int, int>{8, 6});
  CHECK(exact[1] == std::pair<int, int>{6, 4});
  CHECK(exact[2] == std::pair<int, int>{4, 2});
  CHECK(exact[3] == std::pair<int, int>{2, 0});
  CHECK_THROWS_AS(ddim_grid(10, 0), ConfigError);
}

TEST_CASE("guidance combination") {
  Tensor cond = Tensor::from_data({3}, {1.0, 2.0, -1.0});
  Tensor uncond = Tensor::from_data({3}, {0.5, 2.5, 0.0});

  const Tensor w1 = cfg_combine(cond, uncond, 1.0);
  for (int i = 0; i < 3; ++i) CHECK(w1.at(i) == cond.at(i));

  const Tensor w0 = cfg_combine(cond, uncond, 0.0);
  for (int i = 0; i < 3; ++i) CHECK(w0.at(i) == uncond.at(i));

  const Tensor w3 = cfg_combine(cond, uncond, 3.0);
  CHECK(w3.at(0) == doctest::Approx(0.5 + 3.0 * 0.5).epsilon(1e-15));
  CHECK(w3.at(1) == doctest::Approx(2.5 + 3.0 * -0.5).epsilon(1e-15));
  CHECK_THROWS_AS(cfg_combine(cond, Tensor({2}), 2.0), DimensionError);
}

TEST_CASE("mse value and gradient") {
  Tensor a = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0}, true);
  Tensor b = Tensor::from_data({2, 2}, {0.0, 2.0, 5.0, 3.0});
  const Tensor loss = mse(a, b);
  CHECK(loss.value() == doctest::Approx((1.0 + 0.0 + 4.0 + 1.0) / 4.0).epsilon(1e-15));
  backward(loss);
  CHECK(a.grad()[0] == doctest::Approx(2.0 * 1.0 / 4.0));
  CHECK(a.grad()[2] == doctest::Approx(2.0 * -2.0 / 4.0));

  RandomStream rng(21);
  Tensor x({3, 3});
  rng.fill_normal(x.data());
  Tensor target({3, 3});
  rng.fill_normal(target.data());
  CHECK(grad_check([&](const Tensor& v) { return mse(v, target); }, x) < 1e-6);
}

TEST_CASE("ddpm and ddim agree with a perfect predictor on noiseless data") {
  // With x0 known, eps_hat = (x_t - sqrt(abar) x0) / sqrt(1-abar) inverts the
  // corruption, and a deterministic reverse pass recovers x0.
  const NoiseSchedule s = NoiseSchedule::linear(40, 1e-3, 0.05);
  Tensor x0 = Tensor::from_data({2}, {0.8, -0.3});
  RandomStream rng(5);
  Tensor eps({2});
  rng.fill_normal(eps.data());
  Tensor x = q_sample(x0, s.T(), eps, s);

  for (int t = s.T(); t >= 1; --t) {
    const double abar = s.alpha_bar(t);
    Tensor eps_hat({2});
    for (int i = 0; i < 2; ++i) {
      eps_hat.at(i) = (x.at(i) - std::sqrt(abar) * x0.at(i)) / std::sqrt(1.0 - abar);
    }
    x = ddim_step(x, t, t - 1, eps_hat, s);
  }
  CHECK(x.at(0) == doctest::Approx(0.8).epsilon(1e-10));
  CHECK(x.at(1) == doctest::Approx(-0.3).epsilon(1e-10));
}
