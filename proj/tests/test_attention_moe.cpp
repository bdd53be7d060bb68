// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "moediff/attention.hpp"
#include "moediff/errors.hpp"
#include "moediff/random.hpp"
#include "moediff/space_moe.hpp"
#include "moediff/time_moe.hpp"

using namespace moediff;

namespace {

double gelu_ref(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

AttentionParams identity_cross(int d, int d_y) {
  AttentionParams p;
  p.wq = Tensor({d, d}, 0.0);
  p.wk = Tensor({d_y, d}, 0.0);
  p.wv = Tensor({d_y, d}, 0.0);
  for (int i = 0; i < std::min(d_y, d); ++i) p.wv.at(i, i) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("cross attention with zero projections averages non-pad tokens") {
  const int d = 2, d_y = 2;
  Tensor h = Tensor::from_data({2, d}, {0.3, -0.1, 1.0, 0.5});
  Tensor text = Tensor::from_data({3, d_y}, {1.0, 2.0, 3.0, 4.0, 9.0, 9.0});
  const std::vector<bool> pads = {false, false, true};

  const CrossAttentionResult r =
      cross_attention(h, text, identity_cross(d, d_y), pads, 1);
  CHECK(r.out.shape() == std::vector<int>{2, 2});
  CHECK(r.map.map.shape() == std::vector<int>{2, 3});

  // Zero wq/wk give uniform weights over the two non-pad tokens.
  for (int i = 0; i < 2; ++i) {
    CHECK(r.map.map.at(i, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.map.map.at(i, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.map.map.at(i, 2) == 0.0);
    CHECK(r.out.at(i, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.out.at(i, 1) == doctest::Approx(3.0).epsilon(1e-12));
  }
  CHECK(r.map.pad_cols == pads);
}

TEST_CASE("cross attention maps are row-stochastic with pad zeros") {
  RandomStream rng(71);
  const int n_x = 5, n_y = 4, d = 6, d_y = 3;
  Tensor h({n_x, d}), text({n_y, d_y});
  rng.fill_normal(h.data());
  rng.fill_normal(text.data());
  AttentionParams p;
  p.wq = Tensor({d, d});
  p.wk = Tensor({d_y, d});
  p.wv = Tensor({d_y, d});
  rng.fill_normal(p.wq.data());
  rng.fill_normal(p.wk.data());
  rng.fill_normal(p.wv.data());
  const std::vector<bool> pads = {false, true, false, true};

  for (int heads : {1, 2, 3}) {
    const CrossAttentionResult r = cross_attention(h, text, p, pads, heads);
    for (int i = 0; i < n_x; ++i) {
      double row = 0.0;
      for (int j = 0; j < n_y; ++j) {
        if (pads[static_cast<std::size_t>(j)]) {
          CHECK(r.map.map.at(i, j) == 0.0);
        } else {
          CHECK(r.map.map.at(i, j) > 0.0);
        }
        row += r.map.map.at(i, j);
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  CHECK_THROWS_AS(cross_attention(h, text, p, {false, true}, 1), DimensionError);
  CHECK_THROWS_AS(cross_attention(h, text, p, {true, true, true, true}, 1),
                  ContractError);
  CHECK_THROWS_AS(cross_attention(h, text, p, pads, 4), DimensionError);
}

TEST_CASE("self attention shape and head splitting") {
  RandomStream rng(72);
  const int n_x = 4, d = 6;
  Tensor h({n_x, d});
  rng.fill_normal(h.data());
  AttentionParams p;
  p.wq = Tensor({d, d});
  p.wk = Tensor({d, d});
  p.wv = Tensor({d, d});
  rng.fill_normal(p.wq.data());
  rng.fill_normal(p.wk.data());
  rng.fill_normal(p.wv.data());

  const Tensor one = self_attention(h, p, 1);
  const Tensor two = self_attention(h, p, 2);
  CHECK(one.shape() == std::vector<int>{n_x, d});
  CHECK(two.shape() == std::vector<int>{n_x, d});
  bool differs = false;
  for (std::size_t i = 0; i < one.size() && !differs; ++i) {
    differs = std::abs(one.data()[i] - two.data()[i]) > 1e-12;
  }
  CHECK(differs);
}

TEST_CASE("token masks follow the threshold rule") {
  AttentionMap m;
  m.map = Tensor::from_data({3, 3},
                            {0.50, 0.10, 1.0 / 3,
                             0.20, 0.70, 1.0 / 3,
                             0.30, 0.20, 1.0 / 3});
  m.pad_cols = {false, false, true};

  const TokenMasks tm = build_masks(m, 0.5);
  REQUIRE(tm.token_cols == std::vector<int>{0, 1});
  CHECK(tm.eta[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(tm.eta[1] == doctest::Approx(0.35).epsilon(1e-15));
  CHECK(tm.masks[0] == std::vector<char>{1, 0, 1});
  CHECK(tm.masks[1] == std::vector<char>{0, 1, 0});

  // alpha == 1 keeps only positions tied with the column max.
  const TokenMasks top = build_masks(m, 1.0);
  CHECK(top.masks[0] == std::vector<char>{1, 0, 0});
  CHECK(top.masks[1] == std::vector<char>{0, 1, 0});

  // A tiny alpha admits everything with positive attention.
  const TokenMasks all = build_masks(m, 1e-9);
  CHECK(all.masks[0] == std::vector<char>{1, 1, 1});

  CHECK_THROWS_AS(build_masks(m, 0.0), ConfigError);
  CHECK_THROWS_AS(build_masks(m, -0.2), ConfigError);
  CHECK_THROWS_AS(build_masks(m, 1.5), ConfigError);
  AttentionMap bad = m;
  bad.pad_cols = {false};
  CHECK_THROWS_AS(build_masks(bad, 0.5), DimensionError);
}

TEST_CASE("feed-forward expert identity and zero fixed points") {
  FeedForwardExpert e(3, 5);
  RandomStream rng(73);
  e.init(rng);

  Tensor zero({2, 3}, 0.0);
  const Tensor out0 = e.forward(zero);
  for (double v : out0.data()) CHECK(v == 0.0);

  FeedForwardExpert id(3, 5);
  id.w_in = Tensor({3, 5});
  RandomStream r2(74);
  r2.fill_normal(id.w_in.data());
  // w_out stays zero, so e(x) == x exactly.
  Tensor x({4, 3});
  r2.fill_normal(x.data());
  const Tensor out = id.forward(x);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out.data()[i] == x.data()[i]);

  // Hand check one entry of the full form.
  FeedForwardExpert tiny(1, 1);
  tiny.w_in.at(0, 0) = 2.0;
  tiny.w_out.at(0, 0) = 0.5;
  Tensor in = Tensor::from_data({1, 1}, {0.3});
  CHECK(tiny.forward(in).at(0, 0) ==
        doctest::Approx(0.3 + 0.5 * gelu_ref(0.6)).epsilon(1e-15));
}

TEST_CASE("gate logits match the two-layer form") {
  GateNetwork g(2, 2, 2);
  g.w1.at(0, 0) = 1.0;
  g.w1.at(1, 1) = 1.0;
  g.w2.at(0, 0) = 1.0;
  g.w2.at(1, 1) = 1.0;
  g.b2.at(0) = 0.5;

  const std::vector<double> z = g.logits({1.0, 2.0});
  REQUIRE(z.size() == 2);
  CHECK(z[0] == doctest::Approx(gelu_ref(1.0) + 0.5).epsilon(1e-15));
  CHECK(z[1] == doctest::Approx(gelu_ref(2.0)).epsilon(1e-15));

  RandomStream rng(75);
  CHECK(g.route({1.0, 2.0}, 0.0, true, rng) == 1);   // gelu(2) > gelu(1)+0.5
  CHECK(g.route({1.0, -5.0}, 0.0, true, rng) == 0);
  // Inference ignores the noise scale entirely.
  RandomStream a(76), b(77);
  CHECK(g.route({0.3, 0.31}, 10.0, false, a) == g.route({0.3, 0.31}, 10.0, false, b));
  CHECK_THROWS_AS(g.logits({1.0}), DimensionError);
}

TEST_CASE("gate routing with noise is reproducible per stream") {
  GateNetwork g(3, 4, 5);
  RandomStream init(80);
  g.init(init);
  RandomStream r1(81), r2(81);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> in = {r1.normal(), r1.normal(), r1.normal()};
    r2.normal();
    r2.normal();
    r2.normal();
    const int a = g.route(in, 0.7, true, r1);
    const int b = g.route(in, 0.7, true, r2);
    CHECK(a == b);
    CHECK(a >= 0);
    CHECK(a < 5);
  }
}

TEST_CASE("space moe contract checks and balance loss") {
  RandomStream rng(82);
  SpaceMoE moe(4, 3, 2, 6, 5);
  moe.init(rng);

  const int n_x = 4, n_y = 3;
  Tensor h({n_x, 4}), text({n_y, 3});
  rng.fill_normal(h.data());
  rng.fill_normal(text.data());
  AttentionMap map;
  map.map = Tensor({n_x, n_y});
  rng.fill_uniform(map.map.data());
  map.pad_cols = {false, false, true};

  const Tensor out = moe.forward(h, text, map, 0.2, 0.0, false, rng);
  CHECK(out.shape() == std::vector<int>{n_x, 4});
  for (double v : out.data()) CHECK(std::isfinite(v));

  AttentionMap all_pad = map;
  all_pad.pad_cols = {true, true, true};
  CHECK_THROWS_AS(moe.forward(h, text, all_pad, 0.2, 0.0, false, rng), ContractError);
  CHECK_THROWS_AS(moe.balance_loss(text, {true, true, true}, 0.0, false, rng),
                  ContractError);

  const Tensor bal = moe.balance_loss(text, map.pad_cols, 0.0, false, rng);
  CHECK(bal.value() > 0.0);
  CHECK(std::isfinite(bal.value()));

  // One expert: routed fraction and mean probability are both exactly 1.
  SpaceMoE single(4, 3, 1, 6, 5);
  RandomStream r3(83);
  single.init(r3);
  CHECK(single.balance_loss(text, map.pad_cols, 0.0, false, r3).value() == 1.0);
}

TEST_CASE("space moe reports one route per non-pad token") {
  RandomStream rng(84);
  SpaceMoE moe(4, 3, 3, 6, 5);
  moe.init(rng);
  Tensor h({5, 4}), text({4, 3});
  rng.fill_normal(h.data());
  rng.fill_normal(text.data());
  AttentionMap map;
  map.map = Tensor({5, 4});
  rng.fill_uniform(map.map.data());
  map.pad_cols = {false, true, false, false};

  RecordingRouteSink sink;
  moe.forward(h, text, map, 0.2, 0.0, false, rng, &sink, 2, 17);
  REQUIRE(sink.space().size() == 3);
  for (const RouteEntry& e : sink.space()) {
    CHECK(e.t == 17);
    CHECK(e.block == 2);
    CHECK(e.expert >= 0);
    CHECK(e.expert < 3);
  }
}

TEST_CASE("time embedding interleaves sin and cos over the frequency ladder") {
  const Tensor flat = time_embed(0, 4);
  CHECK(flat.at(0) == 0.0);
  CHECK(flat.at(1) == 1.0);
  CHECK(flat.at(2) == 0.0);
  CHECK(flat.at(3) == 1.0);

  const Tensor e = time_embed(7, 6);
  const double f1 = std::pow(10000.0, -0.5);
  CHECK(e.at(0) == doctest::Approx(std::sin(7.0)).epsilon(1e-15));
  CHECK(e.at(1) == doctest::Approx(std::cos(7.0)).epsilon(1e-15));
  CHECK(e.at(2) == doctest::Approx(std::sin(7.0 * f1)).epsilon(1e-15));
  CHECK(e.at(3) == doctest::Approx(std::cos(7.0 * f1)).epsilon(1e-15));
  CHECK(e.at(4) == doctest::Approx(std::sin(7.0 * 1e-4)).epsilon(1e-15));
  CHECK(e.at(5) == doctest::Approx(std::cos(7.0 * 1e-4)).epsilon(1e-15));

  const Tensor pair = time_embed(3, 2);
  CHECK(pair.at(0) == doctest::Approx(std::sin(3.0)).epsilon(1e-15));

  CHECK_THROWS_AS(time_embed(1, 3), ConfigError);
  CHECK_THROWS_AS(time_embed(1, 0), ConfigError);
  CHECK_THROWS_AS(time_embed(-1, 4), ContractError);
}

TEST_CASE("time moe routes once per forward and tables are stable") {
  RandomStream rng(85);
  TimeMoE moe(4, 8, 3, 6, 5);
  moe.init(rng);

  Tensor h({5, 4});
  rng.fill_normal(h.data());
  RecordingRouteSink sink;
  const Tensor out = moe.forward(h, 9, 0.0, false, rng, &sink, 1);
  CHECK(out.shape() == std::vector<int>{5, 4});
  REQUIRE(sink.time().size() == 1);
  CHECK(sink.time()[0].t == 9);
  CHECK(sink.time()[0].block == 1);

  const int chosen = sink.time()[0].expert;
  const Tensor direct = moe.expert(chosen).forward(h);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out.data()[i] == direct.data()[i]);

  const std::vector<int> table = moe.routing_table(20);
  REQUIRE(table.size() == 20);
  CHECK(table == moe.routing_table(20));
  RandomStream unused(0);
  for (int t = 1; t <= 20; ++t) {
    CHECK(table[static_cast<std::size_t>(t - 1)] == moe.route(t, 0.0, false, unused));
  }
  CHECK(table[8] == chosen);
}
