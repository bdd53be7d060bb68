// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "moediff/tensor.hpp"

namespace moediff {

/// Binary PGM (P5, maxval 255) from a [1,h,w] or [h,w] tensor; values are
/// clamped to [0,1] and rounded.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// Binary PPM (P6, maxval 255) from a [3,h,w] tensor.
void write_ppm(const std::filesystem::path& path, const Tensor& image);

}  // namespace moediff
