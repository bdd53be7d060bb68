// SPDX-License-Identifier: Apache-2.0
#include "moediff/manifest.hpp"

#include <fstream>

#include "json.hpp"
#include "moediff/errors.hpp"

namespace moediff {

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

void write_manifest(const RunManifest& m) {
  std::error_code ec;
  std::filesystem::create_directories(m.out_dir, ec);
  if (ec) throw IoError("cannot create output dir " + m.out_dir + ": " + ec.message());
  nlohmann::json j{{"command", m.command},
                   {"config", m.config_path},
                   {"seed", m.seed},
                   {"out", m.out_dir},
                   {"config_hash", m.config_hash}};
  const auto path = std::filesystem::path(m.out_dir) / "manifest.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest: " + path.string());
}

RunManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad manifest " + file.string() + ": " + e.what());
  }
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config_path = j.at("config").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.out_dir = j.at("out").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad manifest " + file.string() + ": " + e.what());
  }
  return m;
}

}  // namespace moediff
