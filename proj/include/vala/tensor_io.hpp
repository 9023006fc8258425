// SPDX-License-Identifier: Apache-2.0
//
// "VLT1" tensor files:
//   bytes 0..3   magic "VLT1"
//   u32 LE       rank
//   rank x u32 LE extents
//   float32 LE   values, row-major (last extent fastest)
// Several tensors may be concatenated in one stream.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "vala/error.hpp"
#include "vala/tokens.hpp"

namespace vala {

inline constexpr std::array<char, 4> kTensorMagic = {'V', 'L', 'T', '1'};
inline constexpr std::uint32_t kMaxTensorRank = 16;

struct RawTensor {
  std::vector<std::uint32_t> extents;
  std::vector<float> values;

  std::size_t size() const noexcept {
    std::size_t n = 1;
    for (auto e : extents) n *= e;
    return n;
  }
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                         static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes, 4);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw FormatError(FormatErrc::truncated, std::string("missing ") + what);
  }
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace detail

inline void write_tensor(std::ostream& out, const RawTensor& tensor) {
  if (tensor.extents.empty() || tensor.extents.size() > kMaxTensorRank) {
    throw DimensionError("tensor rank must be in [1, 16]");
  }
  if (tensor.values.size() != tensor.size()) {
    throw DimensionError("tensor payload does not match its extents");
  }
  out.write(kTensorMagic.data(), 4);
  detail::put_u32(out, static_cast<std::uint32_t>(tensor.extents.size()));
  for (auto e : tensor.extents) detail::put_u32(out, e);
  for (float v : tensor.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw FormatError(FormatErrc::io_failure, "write failed");
}

inline RawTensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError(FormatErrc::truncated, "missing magic");
  if (std::memcmp(magic, kTensorMagic.data(), 4) != 0) {
    throw FormatError(FormatErrc::bad_magic, "expected \"VLT1\"");
  }
  const std::uint32_t rank = detail::get_u32(in, "rank");
  if (rank == 0) throw DimensionError("tensor rank 0 is not supported");
  if (rank > kMaxTensorRank) {
    throw FormatError(FormatErrc::extent_overflow, "rank " + std::to_string(rank) + " exceeds 16");
  }
  RawTensor tensor;
  tensor.extents.reserve(rank);
  std::uint64_t count = 1;
  constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 40;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = detail::get_u32(in, "extent");
    if (e == 0) throw DimensionError("tensor extent " + std::to_string(i) + " is 0");
    count *= e;
    if (count > kMaxElements) {
      throw FormatError(FormatErrc::extent_overflow, "element count exceeds 2^40");
    }
    tensor.extents.push_back(e);
  }
  tensor.values.resize(static_cast<std::size_t>(count));
  for (auto& v : tensor.values) v = std::bit_cast<float>(detail::get_u32(in, "value"));
  return tensor;
}

inline RawTensor to_raw(const Matrix& m) {
  RawTensor t;
  t.extents = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(static_cast<float>(m(r, c)));
  return t;
}

inline RawTensor to_raw(const Vector& v) {
  RawTensor t;
  t.extents = {static_cast<std::uint32_t>(v.size())};
  for (Eigen::Index i = 0; i < v.size(); ++i) t.values.push_back(static_cast<float>(v(i)));
  return t;
}

inline RawTensor to_raw(const LatentTensor& latent) {
  RawTensor t;
  t.extents = {static_cast<std::uint32_t>(latent.frames()),
               static_cast<std::uint32_t>(latent.channels()),
               static_cast<std::uint32_t>(latent.height()),
               static_cast<std::uint32_t>(latent.width())};
  t.values.assign(latent.values().begin(), latent.values().end());
  return t;
}

inline Matrix to_matrix(const RawTensor& t) {
  if (t.extents.size() != 2) {
    throw DimensionError("expected a rank-2 tensor, got rank " + std::to_string(t.extents.size()));
  }
  Matrix m(t.extents[0], t.extents[1]);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.values[i++];
  return m;
}

inline Vector to_vector(const RawTensor& t) {
  if (t.extents.size() != 1) {
    throw DimensionError("expected a rank-1 tensor, got rank " + std::to_string(t.extents.size()));
  }
  Vector v(static_cast<Eigen::Index>(t.values.size()));
  for (std::size_t i = 0; i < t.values.size(); ++i) v(static_cast<Eigen::Index>(i)) = t.values[i];
  return v;
}

inline LatentTensor to_latent(const RawTensor& t) {
  if (t.extents.size() != 4) {
    throw DimensionError("expected a rank-4 tensor, got rank " + std::to_string(t.extents.size()));
  }
  return LatentTensor(t.extents[0], t.extents[1], t.extents[2], t.extents[3],
                      std::vector<double>(t.values.begin(), t.values.end()));
}

inline void save_raw(const std::string& path, const RawTensor& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::io_failure, "cannot open " + path + " for writing");
  write_tensor(out, tensor);
}

inline RawTensor load_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io_failure, "cannot open " + path);
  return read_tensor(in);
}

inline void save_tensor(const std::string& path, const TokenMatrix& tokens) {
  save_raw(path, to_raw(tokens.values()));
}

inline void save_tensor(const std::string& path, const Matrix& m) { save_raw(path, to_raw(m)); }

inline void save_latent(const std::string& path, const LatentTensor& latent) {
  save_raw(path, to_raw(latent));
}

inline TokenMatrix load_tensor(const std::string& path) {
  return TokenMatrix(to_matrix(load_raw(path)));
}

/// Loads a rank-2 token matrix or a rank-4 latent, flattening the latter.
inline TokenMatrix load_tokens(const std::string& path) {
  RawTensor raw = load_raw(path);
  if (raw.extents.size() == 4) return flatten(to_latent(raw));
  return TokenMatrix(to_matrix(raw));
}

}  // namespace vala
