// SPDX-License-Identifier: Apache-2.0
#include "moediff/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "moediff/errors.hpp"

namespace moediff {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'I', 'F', 'F', 'C', 'K', 'P'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint32_t kMaxNameLen = 1u << 20;
constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  void expect_magic() {
    if (bytes_.size() < 9 || std::memcmp(bytes_.data(), kMagic, 8) != 0) {
      throw FormatError("checkpoint: bad magic");
    }
    pos_ = 8;
    const auto version = static_cast<std::uint8_t>(bytes_[pos_++]);
    if (version != kVersion) {
      throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
  }

  bool at_end() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string raw(std::uint32_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated file");
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::string out;
  out.append(kMagic, 8);
  out.push_back(static_cast<char>(kVersion));
  for (const auto& [name, tensor] : tensors) {
    if (name.empty() || name.size() > kMaxNameLen) {
      throw ContractError("checkpoint: tensor name length out of range");
    }
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    const auto& shape = tensor.shape();
    put_u32(out, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : tensor.data()) put_f64(out, v);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("checkpoint: write to " + path.string() + " failed");
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("checkpoint: cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  if (file.bad()) throw IoError("checkpoint: read from " + path.string() + " failed");

  Reader reader(std::move(bytes));
  reader.expect_magic();
  NamedTensors result;
  while (!reader.at_end()) {
    const std::uint32_t name_len = reader.u32();
    if (name_len == 0 || name_len > kMaxNameLen) {
      throw FormatError("checkpoint: implausible name length");
    }
    const std::string name = reader.raw(name_len);
    const std::uint32_t rank = reader.u32();
    if (rank == 0 || rank > kMaxRank) throw FormatError("checkpoint: implausible rank");
    std::vector<int> shape(rank);
    std::uint64_t count = 1;
    for (auto& d : shape) {
      const std::uint64_t dim = reader.u64();
      if (dim == 0 || dim > (1u << 24) || count > (1u << 28) / dim) {
        throw FormatError("checkpoint: implausible dimensions");
      }
      count *= dim;
      d = static_cast<int>(dim);
    }
    std::vector<double> payload(count);
    for (auto& v : payload) v = reader.f64();
    if (!result.emplace(name, Tensor::from_data(std::move(shape), std::move(payload)))
             .second) {
      throw FormatError("checkpoint: duplicate tensor name '" + name + "'");
    }
  }
  return result;
}

void load_checkpoint_into(const std::filesystem::path& path, NamedTensors& dest) {
  NamedTensors loaded = load_checkpoint(path);
  for (const auto& [name, tensor] : dest) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape() != tensor.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " +
                        it->second.shape_str() + ", expected " + tensor.shape_str());
    }
  }
  for (const auto& [name, tensor] : loaded) {
    if (dest.find(name) == dest.end()) {
      throw FormatError("checkpoint: unexpected tensor '" + name + "'");
    }
  }
  for (auto& [name, tensor] : dest) {
    tensor.data() = loaded.at(name).data();
  }
}

}  // namespace moediff
