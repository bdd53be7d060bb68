// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moediff {

// Shape/size disagreement between operands.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller violated an operation's precondition.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value or combination.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or truncated on-disk artifact.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Scene generation could not satisfy the request.
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace moediff
