// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "moediff/buckets.hpp"
#include "moediff/tensor.hpp"
#include "moediff/vocab.hpp"

namespace moediff {

struct GenerationConfig {
  int height = 40;
  int width = 40;
  int min_shapes = 1;
  int max_shapes = 3;
  double background = 0.05;
  double edge_threshold = 0.25;
  /// When set, exactly these (color id, shape id) pairs are rendered instead
  /// of random picks; an empty list gives a background-only scene.
  std::optional<std::vector<std::pair<int, int>>> forced_shapes;
  /// Relation token id to force when two or more shapes are present.
  std::optional<int> forced_relation;
};

struct Scene {
  std::uint64_t seed = 0;
  Tensor image;              // [3,h,w], values in [0,1]
  std::vector<int> caption;  // exactly n_y ids, SUMMARY first, PAD padded
  Tensor edge_map;           // [1,h,w], binary
};

/// Caption of the empty prompt: [SUMMARY, PAD, ..., PAD].
std::vector<int> empty_caption(const Vocabulary& vocab, int n_y);

/// Same ids from the sizes alone (SUMMARY is id 0, PAD the last id).
std::vector<int> empty_caption_ids(int vocab_size, int n_y);

/// Renders 1-3 colored shapes on a plain background, deterministically in the
/// seed. The caption lists each shape as "<color> <shape>" with one spatial
/// relation between the first two shapes, and the layout honors that
/// relation (row index grows downward, so "above" means a smaller row).
/// Throws GenerationError when the requested shapes cannot fit the canvas or
/// the caption cannot fit n_y tokens.
Scene gen_scene(std::uint64_t seed, const GenerationConfig& cfg, const Vocabulary& vocab,
                int n_y);

/// One dataset entry; the image is regenerable from (seed, bucket dims).
struct SceneRecord {
  std::uint64_t seed = 0;
  int bucket = 0;
  std::vector<int> caption;
};

/// Draws a native size per item, assigns it to the nearest bucket, and
/// renders at the bucket dims. Deterministic in seed.
std::vector<SceneRecord> generate_dataset(int count, std::uint64_t seed,
                                          const GenerationConfig& base,
                                          const Vocabulary& vocab,
                                          const BucketSpec& buckets, int n_y);

/// Re-renders the scene behind a record at its bucket's dims.
Scene scene_from_record(const SceneRecord& record, const GenerationConfig& base,
                        const Vocabulary& vocab, const BucketSpec& buckets, int n_y);

/// Line format: "<seed> <bucket> <token ids...>", one record per line.
void write_dataset_manifest(const std::filesystem::path& path,
                            const std::vector<SceneRecord>& records);
std::vector<SceneRecord> read_dataset_manifest(const std::filesystem::path& path);

/// Color-alignment statistic for generated images: clamps to [0,1], keeps
/// pixels whose luminance reaches half the maximum, takes the largest
/// 4-connected such region, and returns the vocabulary color nearest its mean
/// RGB. Returns -1 for an all-dark image.
int dominant_color(const Tensor& image, const Vocabulary& vocab);

}  // namespace moediff
