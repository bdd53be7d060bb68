// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "moediff/tensor.hpp"

namespace moediff {

/// Name -> tensor map with deterministic iteration order; the on-disk record
/// order is the sorted name order.
using NamedTensors = std::map<std::string, Tensor>;

/// Binary checkpoint layout (all integers little-endian):
///   magic   8 bytes  "MDIFFCKP"
///   version 1 byte   0x01
///   records, each:
///     u32    name length
///     bytes  name
///     u32    rank
///     u64[r] dims
///     f64[n] payload, row-major
/// Doubles are stored as their IEEE-754 bit patterns, so a round trip is
/// bit-identical.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);

/// Parses a checkpoint in full before returning; a malformed file throws
/// FormatError and an unreadable one IoError, in both cases without
/// returning partial data.
NamedTensors load_checkpoint(const std::filesystem::path& path);

/// Loads and then copies values into dest. Every name must exist on both
/// sides with matching shape; verification happens before any tensor in dest
/// is touched.
void load_checkpoint_into(const std::filesystem::path& path, NamedTensors& dest);

}  // namespace moediff
