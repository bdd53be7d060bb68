// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

namespace moediff {

/// Ordered list of (height, width) training resolutions.
using BucketSpec = std::vector<std::pair<int, int>>;

/// The nine multi-scale buckets, from widest to tallest.
BucketSpec reference_buckets();

/// Same aspect ratios at desk scale: every dimension divided by `divisor`,
/// which must divide all eighteen reference dimensions.
BucketSpec scaled_buckets(int divisor);

/// Index of the bucket whose aspect ratio is nearest the input's, measured
/// as |log(w/h) - log(w_b/h_b)|. Ties break to the smallest index. The image
/// is then resized (squashed, not cropped) to the winning dims by the caller.
int bucket_assign(int h, int w, const BucketSpec& buckets);

/// Splits a batch budget across buckets proportionally to their image counts
/// using the largest-remainder method. Every non-empty bucket receives at
/// least one slot; empty buckets receive zero; the result sums to budget
/// exactly. Throws ContractError when all buckets are empty or the budget
/// cannot cover the non-empty buckets.
std::vector<int> allocate_batches(const std::vector<long>& counts, int budget);

}  // namespace moediff
