// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace moediff {

/// What a CLI run was asked to do; written to <out>/manifest.json before any
/// work so failed runs still leave a record. Identical manifests plus seed
/// imply bit-identical outputs.
struct RunManifest {
  std::string command;
  std::string config_path;  // empty when the run used built-in defaults
  std::uint64_t seed = 0;
  std::string out_dir;
  std::uint64_t config_hash = 0;  // FNV-1a 64 of the config file text, 0 when none
};

std::uint64_t fnv1a64(const std::string& text);

/// Creates `out_dir` if needed, then writes manifest.json inside it.
void write_manifest(const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& file);

}  // namespace moediff
