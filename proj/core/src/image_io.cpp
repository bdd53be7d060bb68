// SPDX-License-Identifier: Apache-2.0
#include "moediff/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "moediff/errors.hpp"

namespace moediff {

namespace {

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::ofstream open_binary(const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  return file;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  int h = 0, w = 0;
  if (image.rank() == 2) {
    h = image.dim(0);
    w = image.dim(1);
  } else if (image.rank() == 3 && image.dim(0) == 1) {
    h = image.dim(1);
    w = image.dim(2);
  } else {
    throw DimensionError("write_pgm: need [h,w] or [1,h,w], got " + image.shape_str());
  }
  auto file = open_binary(path);
  file << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : image.data()) file.put(static_cast<char>(quantize(v)));
  if (!file) throw IoError("write to " + path.string() + " failed");
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("write_ppm: need [3,h,w], got " + image.shape_str());
  }
  const int h = image.dim(1), w = image.dim(2);
  auto file = open_binary(path);
  file << "P6\n" << w << ' ' << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) file.put(static_cast<char>(quantize(image.at(c, y, x))));
  if (!file) throw IoError("write to " + path.string() + " failed");
}

}  // namespace moediff
