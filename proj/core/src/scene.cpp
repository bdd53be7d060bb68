// SPDX-License-Identifier: Apache-2.0
#include "moediff/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "moediff/edge.hpp"
#include "moediff/errors.hpp"
#include "moediff/random.hpp"

namespace moediff {

namespace {

struct Placement {
  double cy, cx;
};

bool inside_shape(const std::string& name, double dy, double dx, double r) {
  if (name == "circle") return dy * dy + dx * dx <= r * r;
  if (name == "square") return std::fabs(dx) <= r && std::fabs(dy) <= r;
  if (name == "triangle") return dy >= -r && dy <= r && std::fabs(dx) <= (dy + r) / 2.0;
  if (name == "diamond") return std::fabs(dx) + std::fabs(dy) <= r;
  if (name == "cross") {
    return (std::fabs(dx) <= r / 3.0 && std::fabs(dy) <= r) ||
           (std::fabs(dy) <= r / 3.0 && std::fabs(dx) <= r);
  }
  if (name == "ring") {
    const double d2 = dy * dy + dx * dx;
    return d2 <= r * r && d2 >= (r / 2.0) * (r / 2.0);
  }
  throw ContractError("unknown shape '" + name + "'");
}

/// Anchor layout per relation for the first two shapes; extra shapes fill the
/// corner farthest from the ones already placed.
std::vector<Placement> layout(int n, const std::string& relation, int h, int w,
                              RandomStream& rng, double jitter) {
  std::vector<Placement> anchors;
  if (n == 1) {
    anchors.push_back({h / 2.0, w / 2.0});
  } else if (n >= 2) {
    if (relation == "above") {
      anchors.push_back({h / 4.0, w / 2.0});
      anchors.push_back({3.0 * h / 4.0, w / 2.0});
    } else if (relation == "below") {
      anchors.push_back({3.0 * h / 4.0, w / 2.0});
      anchors.push_back({h / 4.0, w / 2.0});
    } else if (relation == "left") {
      anchors.push_back({h / 2.0, w / 4.0});
      anchors.push_back({h / 2.0, 3.0 * w / 4.0});
    } else if (relation == "right") {
      anchors.push_back({h / 2.0, 3.0 * w / 4.0});
      anchors.push_back({h / 2.0, w / 4.0});
    } else {  // beside: side by side, first on the left
      anchors.push_back({h / 2.0, w / 4.0});
      anchors.push_back({h / 2.0, 3.0 * w / 4.0});
    }
  }
  while (static_cast<int>(anchors.size()) < n) {
    const std::vector<Placement> corners = {{h / 4.0, w / 4.0},
                                            {h / 4.0, 3.0 * w / 4.0},
                                            {3.0 * h / 4.0, w / 4.0},
                                            {3.0 * h / 4.0, 3.0 * w / 4.0}};
    double best = -1.0;
    Placement pick = corners[0];
    for (const auto& c : corners) {
      double nearest = 1e18;
      for (const auto& a : anchors) {
        const double d = std::hypot(a.cy - c.cy, a.cx - c.cx);
        nearest = std::min(nearest, d);
      }
      if (nearest > best) {
        best = nearest;
        pick = c;
      }
    }
    anchors.push_back(pick);
  }
  for (auto& a : anchors) {
    a.cy += (rng.uniform() * 2.0 - 1.0) * jitter;
    a.cx += (rng.uniform() * 2.0 - 1.0) * jitter;
  }
  return anchors;
}

template <typename T>
std::vector<T> sample_without_replacement(const std::vector<T>& pool, int n,
                                          RandomStream& rng) {
  std::vector<T> bag = pool;
  std::vector<T> out;
  for (int i = 0; i < n; ++i) {
    const int j = rng.uniform_int(static_cast<int>(bag.size()));
    out.push_back(bag[static_cast<std::size_t>(j)]);
    bag.erase(bag.begin() + j);
  }
  return out;
}

}  // namespace

std::vector<int> empty_caption(const Vocabulary& vocab, int n_y) {
  if (n_y < 1) throw ConfigError("caption length must be >= 1");
  std::vector<int> caption(static_cast<std::size_t>(n_y), vocab.pad_id());
  caption[0] = vocab.summary_id();
  return caption;
}

std::vector<int> empty_caption_ids(int vocab_size, int n_y) {
  if (vocab_size < 2 || n_y < 1) {
    throw ConfigError("empty caption: need vocab >= 2 and length >= 1");
  }
  std::vector<int> caption(static_cast<std::size_t>(n_y), vocab_size - 1);
  caption[0] = 0;
  return caption;
}

Scene gen_scene(std::uint64_t seed, const GenerationConfig& cfg, const Vocabulary& vocab,
                int n_y) {
  if (cfg.height < 12 || cfg.width < 12) {
    throw GenerationError("canvas too small to fit a shape");
  }
  if (cfg.min_shapes < 0 || cfg.max_shapes < cfg.min_shapes) {
    throw GenerationError("invalid shape-count range");
  }
  RandomStream rng(seed, /*stream=*/1);

  std::vector<std::pair<int, int>> picks;  // (color id, shape id)
  if (cfg.forced_shapes) {
    picks = *cfg.forced_shapes;
  } else {
    const int n = cfg.min_shapes + rng.uniform_int(cfg.max_shapes - cfg.min_shapes + 1);
    if (n > 0) {
      const auto colors = sample_without_replacement(vocab.color_ids(), n, rng);
      const auto shapes = sample_without_replacement(vocab.shape_ids(), n, rng);
      for (int i = 0; i < n; ++i) picks.emplace_back(colors[i], shapes[i]);
    }
  }
  const int n = static_cast<int>(picks.size());
  if (n > 3) throw GenerationError("layout supports at most 3 shapes");
  if (n > static_cast<int>(std::min(vocab.color_ids().size(), vocab.shape_ids().size()))) {
    throw GenerationError("more shapes requested than distinct tokens exist");
  }

  int relation = -1;
  if (n >= 2) {
    relation = cfg.forced_relation
                   ? *cfg.forced_relation
                   : vocab.relation_ids()[static_cast<std::size_t>(
                         rng.uniform_int(static_cast<int>(vocab.relation_ids().size())))];
    if (!vocab.is_relation(relation)) {
      throw GenerationError("forced relation id is not a relation token");
    }
  }

  const int needed = 1 + 2 * n + (n >= 2 ? 1 : 0);
  if (needed > n_y) throw GenerationError("caption does not fit n_y tokens");

  std::vector<int> caption;
  caption.push_back(vocab.summary_id());
  for (int i = 0; i < n; ++i) {
    caption.push_back(picks[static_cast<std::size_t>(i)].first);
    caption.push_back(picks[static_cast<std::size_t>(i)].second);
    if (i == 0 && n >= 2) caption.push_back(relation);
  }
  caption.resize(static_cast<std::size_t>(n_y), vocab.pad_id());

  Scene scene;
  scene.seed = seed;
  scene.caption = caption;
  scene.image = Tensor({3, cfg.height, cfg.width}, cfg.background);

  const double r = std::min(cfg.height, cfg.width) / 6.0;
  const double jitter = std::min(cfg.height, cfg.width) / 16.0 - 1.0;
  const auto places = layout(n, relation >= 0 ? vocab.token(relation) : "", cfg.height,
                             cfg.width, rng, std::max(jitter, 0.0));
  for (int i = 0; i < n; ++i) {
    const auto& rgb = vocab.color_rgb(picks[static_cast<std::size_t>(i)].first);
    const std::string& shape = vocab.token(picks[static_cast<std::size_t>(i)].second);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        if (!inside_shape(shape, y - places[static_cast<std::size_t>(i)].cy,
                          x - places[static_cast<std::size_t>(i)].cx, r)) {
          continue;
        }
        for (int ch = 0; ch < 3; ++ch) scene.image.at(ch, y, x) = rgb[static_cast<std::size_t>(ch)];
      }
  }

  scene.edge_map = edge_oracle(scene.image, cfg.edge_threshold);
  return scene;
}

std::vector<SceneRecord> generate_dataset(int count, std::uint64_t seed,
                                          const GenerationConfig& base,
                                          const Vocabulary& vocab,
                                          const BucketSpec& buckets, int n_y) {
  if (count < 0) throw ContractError("generate_dataset: negative count");
  int min_h = buckets.front().first, max_h = min_h;
  int min_w = buckets.front().second, max_w = min_w;
  for (auto [h, w] : buckets) {
    min_h = std::min(min_h, h);
    max_h = std::max(max_h, h);
    min_w = std::min(min_w, w);
    max_w = std::max(max_w, w);
  }

  RandomStream rng(seed, /*stream=*/2);
  std::vector<SceneRecord> records;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t scene_seed = rng.next_u64();
    const int native_h = min_h + rng.uniform_int(max_h - min_h + 1);
    const int native_w = min_w + rng.uniform_int(max_w - min_w + 1);
    SceneRecord rec;
    rec.seed = scene_seed;
    rec.bucket = bucket_assign(native_h, native_w, buckets);
    rec.caption = scene_from_record(rec, base, vocab, buckets, n_y).caption;
    records.push_back(std::move(rec));
  }
  return records;
}

Scene scene_from_record(const SceneRecord& record, const GenerationConfig& base,
                        const Vocabulary& vocab, const BucketSpec& buckets, int n_y) {
  if (record.bucket < 0 || record.bucket >= static_cast<int>(buckets.size())) {
    throw ContractError("scene_from_record: bucket index out of range");
  }
  GenerationConfig cfg = base;
  cfg.height = buckets[static_cast<std::size_t>(record.bucket)].first;
  cfg.width = buckets[static_cast<std::size_t>(record.bucket)].second;
  return gen_scene(record.seed, cfg, vocab, n_y);
}

void write_dataset_manifest(const std::filesystem::path& path,
                            const std::vector<SceneRecord>& records) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& rec : records) {
    file << rec.seed << ' ' << rec.bucket;
    for (int id : rec.caption) file << ' ' << id;
    file << '\n';
  }
  if (!file) throw IoError("write to " + path.string() + " failed");
}

std::vector<SceneRecord> read_dataset_manifest(const std::filesystem::path& path) {
  std::ifstream file(path);
  if (!file) throw IoError("cannot open " + path.string());
  std::vector<SceneRecord> records;
  std::string line;
  while (std::getline(file, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    SceneRecord rec;
    if (!(ss >> rec.seed >> rec.bucket)) {
      throw FormatError("dataset manifest: malformed line '" + line + "'");
    }
    int id;
    while (ss >> id) rec.caption.push_back(id);
    if (rec.caption.empty()) {
      throw FormatError("dataset manifest: record without caption");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

int dominant_color(const Tensor& image, const Vocabulary& vocab) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("dominant_color: want [3,h,w], got " + image.shape_str());
  }
  const int h = image.dim(1), w = image.dim(2);
  auto clamped = [&](int c, int i, int j) {
    return std::min(1.0, std::max(0.0, image.at(c, i, j)));
  };

  std::vector<double> lum(static_cast<std::size_t>(h) * w);
  double max_lum = 0.0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double l = (clamped(0, i, j) + clamped(1, i, j) + clamped(2, i, j)) / 3.0;
      lum[static_cast<std::size_t>(i) * w + j] = l;
      max_lum = std::max(max_lum, l);
    }
  }
  if (max_lum == 0.0) return -1;
  const double thresh = 0.5 * max_lum;

  // Largest 4-connected bright region by flood fill.
  std::vector<int> label(lum.size(), -1);
  int best_label = -1;
  std::size_t best_size = 0;
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < lum.size(); ++start) {
    if (label[start] >= 0 || lum[start] < thresh) continue;
    std::size_t count = 0;
    stack.push_back(start);
    label[start] = next;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++count;
      const int i = static_cast<int>(p) / w, j = static_cast<int>(p) % w;
      const int ni[] = {i - 1, i + 1, i, i};
      const int nj[] = {j, j, j - 1, j + 1};
      for (int q = 0; q < 4; ++q) {
        if (ni[q] < 0 || ni[q] >= h || nj[q] < 0 || nj[q] >= w) continue;
        const std::size_t np = static_cast<std::size_t>(ni[q]) * w + nj[q];
        if (label[np] >= 0 || lum[np] < thresh) continue;
        label[np] = next;
        stack.push_back(np);
      }
    }
    if (count > best_size) {
      best_size = count;
      best_label = next;
    }
    ++next;
  }

  double mean[3] = {0.0, 0.0, 0.0};
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (label[static_cast<std::size_t>(i) * w + j] != best_label) continue;
      for (int c = 0; c < 3; ++c) mean[c] += clamped(c, i, j);
    }
  }
  for (double& m : mean) m /= static_cast<double>(best_size);

  int best_color = -1;
  double best_dist = 1e300;
  for (int id : vocab.color_ids()) {
    const auto& rgb = vocab.color_rgb(id);
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) d2 += (mean[c] - rgb[c]) * (mean[c] - rgb[c]);
    if (d2 < best_dist) {
      best_dist = d2;
      best_color = id;
    }
  }
  return best_color;
}

}  // namespace moediff
