// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace moediff {

/// Counter-based pseudo-random stream built on Philox4x32-10.
///
/// Every draw is a pure function of (key, counter), so streams can be split
/// by deriving a fresh key and the whole program stays reproducible from one
/// root seed. Algorithm: Philox4x32 with 10 rounds, multipliers 0xD2511F53 /
/// 0xCD9E8D57 and Weyl increments 0x9E3779B9 / 0xBB67AE85 (Salmon et al.'s
/// reference constants). Doubles take the top 53 bits of a 64-bit draw;
/// normals come from the Box-Muller transform on two uniforms.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0);

  /// Derives an independent stream; (seed, label) pairs never collide
  /// because the derivation is one Philox block keyed by this stream's key.
  RandomStream split(std::uint64_t label) const;

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform();

  /// Standard normal draw.
  double normal();

  /// Uniform integer in [0, n), n > 0. Rejection sampling, no modulo bias.
  int uniform_int(int n);

  void fill_normal(std::vector<double>& out);
  void fill_uniform(std::vector<double>& out);
  /// Uniform in [-bound, bound], the fan-in weight-init fill.
  void fill_uniform_signed(std::vector<double>& out, double bound);

  static std::array<std::uint32_t, 4> philox_block(std::array<std::uint32_t, 4> counter,
                                                   std::array<std::uint32_t, 2> key);

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int block_pos_ = 4;  // 4 == exhausted
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;

  std::uint32_t next_u32();
};

}  // namespace moediff
