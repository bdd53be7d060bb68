// SPDX-License-Identifier: Apache-2.0
#include "moediff/vocab.hpp"

#include <algorithm>
#include <array>

#include "moediff/errors.hpp"

namespace moediff {

namespace {

const std::vector<std::string> kShapes = {"circle", "square",  "triangle",
                                          "diamond", "cross", "ring"};

const std::vector<std::pair<std::string, std::array<double, 3>>> kColors = {
    {"red", {1.0, 0.0, 0.0}},     {"green", {0.0, 0.8, 0.0}},
    {"blue", {0.0, 0.0, 1.0}},    {"yellow", {1.0, 1.0, 0.0}},
    {"magenta", {1.0, 0.0, 1.0}}, {"cyan", {0.0, 1.0, 1.0}},
    {"orange", {1.0, 0.5, 0.0}},  {"white", {1.0, 1.0, 1.0}}};

const std::vector<std::string> kRelations = {"above", "below", "left", "right",
                                             "beside"};

}  // namespace

Vocabulary::Vocabulary() {
  tokens_.push_back("SUMMARY");
  for (const auto& s : kShapes) {
    shapes_.push_back(static_cast<int>(tokens_.size()));
    tokens_.push_back(s);
  }
  for (const auto& [name, rgb] : kColors) {
    colors_.push_back(static_cast<int>(tokens_.size()));
    tokens_.push_back(name);
    rgb_.push_back(rgb);
  }
  for (const auto& r : kRelations) {
    relations_.push_back(static_cast<int>(tokens_.size()));
    tokens_.push_back(r);
  }
  tokens_.push_back("PAD");
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id_of(const std::string& word) const {
  auto it = std::find(tokens_.begin(), tokens_.end(), word);
  if (it == tokens_.end()) throw ContractError("vocabulary: unknown word '" + word + "'");
  return static_cast<int>(it - tokens_.begin());
}

bool Vocabulary::is_shape(int id) const {
  return std::find(shapes_.begin(), shapes_.end(), id) != shapes_.end();
}

bool Vocabulary::is_color(int id) const {
  return std::find(colors_.begin(), colors_.end(), id) != colors_.end();
}

bool Vocabulary::is_relation(int id) const {
  return std::find(relations_.begin(), relations_.end(), id) != relations_.end();
}

const std::array<double, 3>& Vocabulary::color_rgb(int color_id) const {
  for (std::size_t i = 0; i < colors_.size(); ++i) {
    if (colors_[i] == color_id) return rgb_[i];
  }
  throw ContractError("vocabulary: id " + std::to_string(color_id) + " is not a color");
}

}  // namespace moediff
