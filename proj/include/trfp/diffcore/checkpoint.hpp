#pragma once

// Binary checkpoint container.
//
//   "TRFP"                      4 magic bytes
//   u32 version                 little-endian
//   u64 tensor count
//   per tensor:
//     u64 name length, UTF-8 name bytes
//     u64 rank, rank x u64 dims
//     prod(dims) x f64          row-major, little-endian
//
// Optimizer state is stored as ordinary tensors under suffixed names
// (".adam_m", ".adam_v", ".adam_step").

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "trfp/diffcore/mlp.hpp"
#include "trfp/error.hpp"

namespace trfp::diff {

inline constexpr char kCheckpointMagic[4] = {'T', 'R', 'F', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<double> data;

  static Tensor scalar(double v) { return Tensor{{}, {v}}; }
  static Tensor from_matrix(const Matrix& m) {
    Tensor t;
    t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.data.assign(m.data(), m.data() + m.size());
    return t;
  }
  Matrix to_matrix() const {
    if (dims.size() != 2) throw ConfigError("checkpoint: tensor is not rank 2");
    Matrix m(static_cast<Index>(dims[0]), static_cast<Index>(dims[1]));
    std::copy(data.begin(), data.end(), m.data());
    return m;
  }
  double to_scalar() const {
    if (!dims.empty() || data.size() != 1) throw ConfigError("checkpoint: tensor is not a scalar");
    return data[0];
  }
};

// Name-ordered so that the byte image is independent of insertion order.
using Checkpoint = std::map<std::string, Tensor>;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}
inline void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  std::uint64_t u64() { return read(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(read(4)); }
  double f64() { return std::bit_cast<double>(read(8)); }
  std::string str(std::uint64_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw ConfigError("checkpoint: truncated file");
  }
  std::uint64_t read(int n) {
    need(static_cast<std::uint64_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, ckpt.size());
  for (const auto& [name, t] : ckpt) {
    std::uint64_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw ConfigError("checkpoint: tensor '" + name + "' dims disagree with payload");
    detail::put_u64(out, name.size());
    out += name;
    detail::put_u64(out, t.dims.size());
    for (auto d : t.dims) detail::put_u64(out, d);
    for (double v : t.data) detail::put_f64(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw ConfigError("checkpoint: bad magic (not a TRFP checkpoint)");
  }
  detail::Reader r(bytes);
  r.str(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported format version " + std::to_string(version) +
                      " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str(r.u64());
    Tensor t;
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw ConfigError("checkpoint: implausible rank for '" + name + "'");
    std::uint64_t count = 1;
    for (std::uint64_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u64());
      count *= t.dims.back();
    }
    if (count > (bytes.size() / 8)) throw ConfigError("checkpoint: truncated file");
    t.data.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) t.data.push_back(r.f64());
    ckpt.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw ConfigError("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("checkpoint: cannot open '" + path + "' for writing");
  const std::string bytes = encode_checkpoint(ckpt);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ConfigError("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("checkpoint: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

inline const Tensor& require(const Checkpoint& ckpt, const std::string& name) {
  auto it = ckpt.find(name);
  if (it == ckpt.end()) throw ConfigError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

inline void put_matrix_list(Checkpoint& ckpt, const std::string& prefix, const std::vector<Matrix>& ms) {
  for (std::size_t i = 0; i < ms.size(); ++i) {
    ckpt[prefix + "." + std::to_string(i)] = Tensor::from_matrix(ms[i]);
  }
}

inline void put_mlp(Checkpoint& ckpt, const std::string& prefix, const MlpParams& p) {
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i);
    ckpt[base + ".weight"] = Tensor::from_matrix(p.layers[i].weight);
    ckpt[base + ".bias"] = Tensor::from_matrix(p.layers[i].bias);
    if (!p.adam.first_moment.empty()) {
      ckpt[base + ".weight.adam_m"] = Tensor::from_matrix(p.adam.first_moment[2 * i]);
      ckpt[base + ".weight.adam_v"] = Tensor::from_matrix(p.adam.second_moment[2 * i]);
      ckpt[base + ".bias.adam_m"] = Tensor::from_matrix(p.adam.first_moment[2 * i + 1]);
      ckpt[base + ".bias.adam_v"] = Tensor::from_matrix(p.adam.second_moment[2 * i + 1]);
    }
  }
  ckpt[prefix + ".adam_step"] = Tensor::scalar(static_cast<double>(p.adam.step));
}

inline MlpParams get_mlp(const Checkpoint& ckpt, const std::string& prefix) {
  MlpParams p;
  for (std::size_t i = 0;; ++i) {
    const std::string base = prefix + ".layer" + std::to_string(i);
    if (!ckpt.contains(base + ".weight")) break;
    DenseLayer l;
    l.weight = require(ckpt, base + ".weight").to_matrix();
    l.bias = require(ckpt, base + ".bias").to_matrix();
    p.layers.push_back(std::move(l));
  }
  if (p.layers.empty()) throw ConfigError("checkpoint: no layers under '" + prefix + "'");
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    p.layers[i].activation = i + 1 == p.layers.size() ? Activation::Identity : Activation::Mish;
  }
  if (ckpt.contains(prefix + ".layer0.weight.adam_m")) {
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
      const std::string base = prefix + ".layer" + std::to_string(i);
      p.adam.first_moment.push_back(require(ckpt, base + ".weight.adam_m").to_matrix());
      p.adam.second_moment.push_back(require(ckpt, base + ".weight.adam_v").to_matrix());
      p.adam.first_moment.push_back(require(ckpt, base + ".bias.adam_m").to_matrix());
      p.adam.second_moment.push_back(require(ckpt, base + ".bias.adam_v").to_matrix());
    }
  }
  p.adam.step = static_cast<std::int64_t>(require(ckpt, prefix + ".adam_step").to_scalar());
  p.validate();
  return p;
}

}  // namespace trfp::diff
