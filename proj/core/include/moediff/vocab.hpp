// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

namespace moediff {

/// Closed vocabulary for the synthetic scene captions.
///
/// Layout: index 0 is SUMMARY (the pooled caption token), followed by the
/// shape nouns, the color adjectives, the spatial relations, and finally PAD
/// at index V-1. Token ids are dense.
class Vocabulary {
 public:
  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  int summary_id() const { return 0; }
  int pad_id() const { return size() - 1; }

  const std::string& token(int id) const;
  /// Throws ContractError for unknown words.
  int id_of(const std::string& word) const;

  const std::vector<int>& shape_ids() const { return shapes_; }
  const std::vector<int>& color_ids() const { return colors_; }
  const std::vector<int>& relation_ids() const { return relations_; }

  bool is_shape(int id) const;
  bool is_color(int id) const;
  bool is_relation(int id) const;

  /// RGB fill for a color token, each channel in [0,1].
  const std::array<double, 3>& color_rgb(int color_id) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<int> shapes_, colors_, relations_;
  std::vector<std::array<double, 3>> rgb_;  // indexed parallel to colors_
};

}  // namespace moediff
