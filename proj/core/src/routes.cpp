// SPDX-License-Identifier: Apache-2.0
#include "moediff/routes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "moediff/errors.hpp"
#include "moediff/random.hpp"

namespace moediff {

std::vector<int> reduce_trace(const RouteTrace& trace, RouteReduce mode) {
  if (trace.space.empty() || trace.blocks < 1) {
    throw ContractError("reduce_trace: empty trace");
  }
  std::vector<int> feature(static_cast<std::size_t>(trace.blocks), -1);
  for (int b = 0; b < trace.blocks; ++b) {
    std::map<int, int> counts;
    int first = -1, last = -1;
    for (const RouteEntry& e : trace.space) {
      if (e.block != b) continue;
      ++counts[e.expert];
      if (first < 0) first = e.expert;
      last = e.expert;
    }
    if (counts.empty()) {
      throw ContractError("reduce_trace: no entries for block " + std::to_string(b));
    }
    switch (mode) {
      case RouteReduce::kFirst:
        feature[static_cast<std::size_t>(b)] = first;
        break;
      case RouteReduce::kLast:
        feature[static_cast<std::size_t>(b)] = last;
        break;
      case RouteReduce::kMajority: {
        int best = -1, best_count = -1;
        for (const auto& [expert, count] : counts) {
          if (count > best_count) {
            best = expert;
            best_count = count;
          }
        }
        feature[static_cast<std::size_t>(b)] = best;
        break;
      }
    }
  }
  return feature;
}

namespace {

void check_dataset(const RouteDataset& data, int folds) {
  if (data.num_classes < 2) {
    throw ContractError("route classifier: need at least two classes");
  }
  if (folds < 2) throw ContractError("route classifier: need folds >= 2");
  if (data.features.size() != data.labels.size() || data.features.empty()) {
    throw ContractError("route classifier: features and labels disagree");
  }
  const std::size_t width = data.features.front().size();
  std::vector<int> per_class(static_cast<std::size_t>(data.num_classes), 0);
  for (std::size_t i = 0; i < data.features.size(); ++i) {
    if (data.features[i].size() != width) {
      throw ContractError("route classifier: ragged feature rows");
    }
    for (int e : data.features[i]) {
      if (e < 0 || e >= data.num_experts) {
        throw ContractError("route classifier: expert index out of range");
      }
    }
    const int y = data.labels[i];
    if (y < 0 || y >= data.num_classes) {
      throw ContractError("route classifier: label out of range");
    }
    ++per_class[static_cast<std::size_t>(y)];
  }
  for (int c = 0; c < data.num_classes; ++c) {
    if (per_class[static_cast<std::size_t>(c)] < folds) {
      throw ContractError("route classifier: class " + std::to_string(c) +
                          " has fewer rows than folds");
    }
  }
}

/// Stratified fold ids: rows of each class are shuffled, then dealt
/// round-robin across folds.
std::vector<int> fold_assignments(const RouteDataset& data, int folds,
                                  std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  }
  RandomStream rng(seed, 4);
  std::vector<int> fold(data.labels.size(), 0);
  for (auto& rows : by_class) {
    for (std::size_t i = rows.size(); i > 1; --i) {
      std::swap(rows[i - 1], rows[static_cast<std::size_t>(
                                 rng.uniform_int(static_cast<int>(i)))]);
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      fold[rows[i]] = static_cast<int>(i) % folds;
    }
  }
  return fold;
}

/// One-hot route encoding with a trailing constant-1 bias column.
std::vector<double> encode(const std::vector<int>& route, int num_experts) {
  std::vector<double> x(route.size() * static_cast<std::size_t>(num_experts) + 1, 0.0);
  for (std::size_t b = 0; b < route.size(); ++b) {
    x[b * static_cast<std::size_t>(num_experts) + static_cast<std::size_t>(route[b])] =
        1.0;
  }
  x.back() = 1.0;
  return x;
}

std::vector<double> class_probs(const std::vector<double>& w, std::size_t dim,
                                int classes, const std::vector<double>& x) {
  std::vector<double> z(static_cast<std::size_t>(classes), 0.0);
  for (int c = 0; c < classes; ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      acc += w[static_cast<std::size_t>(c) * dim + j] * x[j];
    }
    z[static_cast<std::size_t>(c)] = acc;
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - zmax);
    sum += v;
  }
  for (double& v : z) v /= sum;
  return z;
}

}  // namespace

double train_route_classifier(const RouteDataset& data, int folds, std::uint64_t seed,
                              int iterations, double lr) {
  check_dataset(data, folds);
  const std::vector<int> fold = fold_assignments(data, folds, seed);
  const std::size_t dim =
      data.features.front().size() * static_cast<std::size_t>(data.num_experts) + 1;
  std::vector<std::vector<double>> encoded;
  encoded.reserve(data.features.size());
  for (const auto& route : data.features) {
    encoded.push_back(encode(route, data.num_experts));
  }

  double accuracy_sum = 0.0;
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t i = 0; i < encoded.size(); ++i) {
      (fold[i] == f ? test_rows : train_rows).push_back(i);
    }
    std::vector<double> w(dim * static_cast<std::size_t>(data.num_classes), 0.0);
    std::vector<double> grad(w.size());
    for (int it = 0; it < iterations; ++it) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i : train_rows) {
        const std::vector<double> p = class_probs(w, dim, data.num_classes, encoded[i]);
        for (int c = 0; c < data.num_classes; ++c) {
          const double delta =
              p[static_cast<std::size_t>(c)] - (c == data.labels[i] ? 1.0 : 0.0);
          for (std::size_t j = 0; j < dim; ++j) {
            grad[static_cast<std::size_t>(c) * dim + j] += delta * encoded[i][j];
          }
        }
      }
      const double scale = lr / static_cast<double>(train_rows.size());
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= scale * grad[j];
    }
    int correct = 0;
    for (std::size_t i : test_rows) {
      const std::vector<double> p = class_probs(w, dim, data.num_classes, encoded[i]);
      const int pred = static_cast<int>(
          std::max_element(p.begin(), p.end()) - p.begin());
      if (pred == data.labels[i]) ++correct;
    }
    accuracy_sum += static_cast<double>(correct) / static_cast<double>(test_rows.size());
  }
  return accuracy_sum / folds;
}

RouteDataset shuffle_labels(const RouteDataset& data, std::uint64_t seed) {
  RouteDataset out = data;
  RandomStream rng(seed, 5);
  for (std::size_t i = out.labels.size(); i > 1; --i) {
    std::swap(out.labels[i - 1],
              out.labels[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
  }
  return out;
}

std::vector<int> distinct_routes_per_class(const RouteDataset& data) {
  std::vector<std::set<std::vector<int>>> seen(
      static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.features.size(); ++i) {
    seen[static_cast<std::size_t>(data.labels[i])].insert(data.features[i]);
  }
  std::vector<int> counts;
  counts.reserve(seen.size());
  for (const auto& s : seen) counts.push_back(static_cast<int>(s.size()));
  return counts;
}

void write_trace_csv(const std::filesystem::path& path,
                     const std::vector<RouteTrace>& traces) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open trace file: " + path.string());
  out << "prompt_id,concept_token,t,block,space_expert,time_expert\n";
  for (std::size_t id = 0; id < traces.size(); ++id) {
    const RouteTrace& tr = traces[id];
    std::map<std::pair<int, int>, int> time_for;
    for (const RouteEntry& e : tr.time) time_for[{e.t, e.block}] = e.expert;
    for (const RouteEntry& e : tr.space) {
      const auto it = time_for.find({e.t, e.block});
      out << id << ',' << tr.concept_token << ',' << e.t << ',' << e.block << ','
          << e.expert << ',' << (it == time_for.end() ? -1 : it->second) << '\n';
    }
  }
  if (!out) throw IoError("failed writing trace file: " + path.string());
}

void write_feature_csv(const std::filesystem::path& path, const RouteDataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open feature file: " + path.string());
  out << "label";
  const std::size_t width = data.features.empty() ? 0 : data.features.front().size();
  for (std::size_t b = 1; b <= width; ++b) out << ",e_" << b;
  out << '\n';
  for (std::size_t i = 0; i < data.features.size(); ++i) {
    out << data.labels[i];
    for (int e : data.features[i]) out << ',' << e;
    out << '\n';
  }
  if (!out) throw IoError("failed writing feature file: " + path.string());
}

}  // namespace moediff
