// SPDX-License-Identifier: Apache-2.0
#include "moediff/buckets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "moediff/errors.hpp"

namespace moediff {

BucketSpec reference_buckets() {
  return {{448, 832}, {512, 768}, {512, 704}, {640, 640}, {576, 640},
          {640, 576}, {704, 512}, {768, 512}, {832, 448}};
}

BucketSpec scaled_buckets(int divisor) {
  if (divisor <= 0) throw ConfigError("bucket divisor must be positive");
  BucketSpec scaled;
  for (auto [h, w] : reference_buckets()) {
    if (h % divisor != 0 || w % divisor != 0) {
      throw ConfigError("bucket divisor " + std::to_string(divisor) +
                        " does not divide " + std::to_string(h) + "x" + std::to_string(w));
    }
    scaled.emplace_back(h / divisor, w / divisor);
  }
  return scaled;
}

int bucket_assign(int h, int w, const BucketSpec& buckets) {
  if (h <= 0 || w <= 0) throw ContractError("bucket_assign: dims must be positive");
  if (buckets.empty()) throw ContractError("bucket_assign: empty bucket list");
  const double target = std::log(static_cast<double>(w) / h);
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    const auto [bh, bw] = buckets[i];
    const double dist = std::fabs(target - std::log(static_cast<double>(bw) / bh));
    if (dist < best_dist) {
      best_dist = dist;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::vector<int> allocate_batches(const std::vector<long>& counts, int budget) {
  const long total = std::accumulate(counts.begin(), counts.end(), 0L);
  int non_empty = 0;
  for (long c : counts) {
    if (c < 0) throw ContractError("allocate_batches: negative count");
    if (c > 0) ++non_empty;
  }
  if (total == 0) throw ContractError("allocate_batches: all buckets empty");
  if (budget < non_empty) {
    throw ContractError("allocate_batches: budget " + std::to_string(budget) +
                        " cannot give every non-empty bucket a slot");
  }

  const std::size_t n = counts.size();
  std::vector<int> alloc(n, 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] == 0) continue;
    const double share = static_cast<double>(budget) * counts[i] / total;
    alloc[i] = static_cast<int>(std::floor(share));
    assigned += alloc[i];
    remainders.emplace_back(share - alloc[i], i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < budget; ++r) {
    alloc[remainders[r % remainders.size()].second] += 1;
    ++assigned;
  }

  // Largest-remainder can starve tiny buckets; top them up from the largest.
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] == 0 || alloc[i] > 0) continue;
    const auto donor = std::max_element(alloc.begin(), alloc.end());
    *donor -= 1;
    alloc[i] += 1;
  }
  return alloc;
}

}  // namespace moediff
