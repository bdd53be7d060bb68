// SPDX-License-Identifier: Apache-2.0
#include "moediff/random.hpp"

#include <cmath>

#include "moediff/errors.hpp"

namespace moediff {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline std::uint32_t mulhi(std::uint32_t a, std::uint32_t b) {
  return static_cast<std::uint32_t>((static_cast<std::uint64_t>(a) * b) >> 32);
}
inline std::uint32_t mullo(std::uint32_t a, std::uint32_t b) {
  return a * b;
}

}  // namespace

std::array<std::uint32_t, 4> RandomStream::philox_block(std::array<std::uint32_t, 4> c,
                                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint32_t hi0 = mulhi(kPhiloxM0, c[0]);
    const std::uint32_t lo0 = mullo(kPhiloxM0, c[0]);
    const std::uint32_t hi1 = mulhi(kPhiloxM1, c[2]);
    const std::uint32_t lo1 = mullo(kPhiloxM1, c[2]);
    c = {hi1 ^ c[1] ^ key[0], lo1, hi0 ^ c[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return c;
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream) {
  // Mix (seed, stream) into a key with one block so nearby seeds diverge.
  const auto mixed = philox_block(
      {static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0u, 0u},
      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  key_ = {mixed[0], mixed[1]};
}

RandomStream RandomStream::split(std::uint64_t label) const {
  const auto mixed = philox_block(
      {static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(label >> 32), 0u, 1u}, key_);
  RandomStream child(0);
  child.key_ = {mixed[2], mixed[3]};
  child.counter_ = 0;
  child.block_pos_ = 4;
  child.has_cached_normal_ = false;
  return child;
}

std::uint32_t RandomStream::next_u32() {
  if (block_pos_ == 4) {
    block_ = philox_block({static_cast<std::uint32_t>(counter_),
                           static_cast<std::uint32_t>(counter_ >> 32), 0u, 2u},
                          key_);
    ++counter_;
    block_pos_ = 0;
  }
  return block_[block_pos_++];
}

std::uint64_t RandomStream::next_u64() {
  const std::uint64_t hi = next_u32();
  const std::uint64_t lo = next_u32();
  return (hi << 32) | lo;
}

double RandomStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  cached_normal_ = r * std::sin(theta);
  has_cached_normal_ = true;
  return r * std::cos(theta);
}

int RandomStream::uniform_int(int n) {
  if (n <= 0) throw ContractError("uniform_int: n must be positive");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  std::uint64_t draw;
  do {
    draw = next_u64();
  } while (draw >= limit);
  return static_cast<int>(draw % un);
}

void RandomStream::fill_normal(std::vector<double>& out) {
  for (double& v : out) v = normal();
}

void RandomStream::fill_uniform(std::vector<double>& out) {
  for (double& v : out) v = uniform();
}

void RandomStream::fill_uniform_signed(std::vector<double>& out, double bound) {
  for (double& v : out) v = (uniform() * 2.0 - 1.0) * bound;
}

}  // namespace moediff
