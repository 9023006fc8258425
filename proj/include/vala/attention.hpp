// SPDX-License-Identifier: Apache-2.0
//
// Cross-frame attention kernels: the (h*w) x l x c alignment reshape, full
// single-head self-attention over M tokens, and anchor attention where the
// keys and values come from A anchors.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vala/error.hpp"
#include "vala/objective.hpp"
#include "vala/rng.hpp"
#include "vala/tokens.hpp"

namespace vala {

struct AttentionProjection {
  Matrix query;  // c x d
  Matrix key;    // c x d
  Matrix value;  // c x d

  Eigen::Index input_dim() const noexcept { return query.rows(); }
  Eigen::Index head_dim() const noexcept { return query.cols(); }

  void validate() const {
    if (key.rows() != query.rows() || value.rows() != query.rows() ||
        key.cols() != query.cols() || value.cols() != query.cols()) {
      throw DimensionError("attention projections must all be c x d");
    }
    if (!query.allFinite() || !key.allFinite() || !value.allFinite()) {
      throw NumericalError("attention projection has non-finite entries");
    }
  }
};

/// Xavier-uniform projections drawn in the order W_Q, W_K, W_V.
inline AttentionProjection make_projection(Eigen::Index input_dim, Eigen::Index head_dim,
                                           std::uint64_t seed) {
  if (input_dim < 1 || head_dim < 1) throw ConfigError("projection extents must be >= 1");
  SeededRng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(input_dim + head_dim));
  auto draw = [&] {
    Matrix w(input_dim, head_dim);
    for (Eigen::Index r = 0; r < input_dim; ++r)
      for (Eigen::Index c = 0; c < head_dim; ++c) w(r, c) = rng.uniform(-bound, bound);
    return w;
  };
  AttentionProjection p;
  p.query = draw();
  p.key = draw();
  p.value = draw();
  return p;
}

/// phi(z): (h*w) x l x c, out[p][f][ch] = z[f][ch][p / w][p % w].
class AlignedLatents {
 public:
  AlignedLatents(std::size_t positions, std::size_t frames, std::size_t channels)
      : positions_(positions), frames_(frames), channels_(channels),
        data_(positions * frames * channels, 0.0) {}

  std::size_t positions() const noexcept { return positions_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t channels() const noexcept { return channels_; }

  double& operator()(std::size_t p, std::size_t f, std::size_t ch) {
    return data_[(p * frames_ + f) * channels_ + ch];
  }
  double operator()(std::size_t p, std::size_t f, std::size_t ch) const {
    return data_[(p * frames_ + f) * channels_ + ch];
  }

  /// l x c token matrix of one spatial location, the unit cross-frame attention runs over.
  Matrix location(std::size_t p) const {
    Matrix out(static_cast<Eigen::Index>(frames_), static_cast<Eigen::Index>(channels_));
    for (std::size_t f = 0; f < frames_; ++f)
      for (std::size_t ch = 0; ch < channels_; ++ch)
        out(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(ch)) = (*this)(p, f, ch);
    return out;
  }

 private:
  std::size_t positions_, frames_, channels_;
  std::vector<double> data_;
};

inline AlignedLatents align(const LatentTensor& latent) {
  const std::size_t w = latent.width();
  AlignedLatents out(latent.height() * w, latent.frames(), latent.channels());
  for (std::size_t p = 0; p < out.positions(); ++p)
    for (std::size_t f = 0; f < latent.frames(); ++f)
      for (std::size_t ch = 0; ch < latent.channels(); ++ch)
        out(p, f, ch) = latent(f, ch, p / w, p % w);
  return out;
}

/// Inverse of align; needs the original width.
inline LatentTensor unalign(const AlignedLatents& aligned, std::size_t width) {
  if (width == 0 || aligned.positions() % width != 0) {
    throw DimensionError("unalign: width does not divide the position count");
  }
  LatentTensor out(aligned.frames(), aligned.channels(), aligned.positions() / width, width);
  for (std::size_t p = 0; p < aligned.positions(); ++p)
    for (std::size_t f = 0; f < aligned.frames(); ++f)
      for (std::size_t ch = 0; ch < aligned.channels(); ++ch)
        out(f, ch, p / width, p % width) = aligned(p, f, ch);
  return out;
}

/// Row-stochastic softmax(Q K^T / sqrt(d)).
inline Matrix attention_weights(const Matrix& queries, const Matrix& keys) {
  if (queries.cols() != keys.cols()) throw DimensionError("attention: query/key width mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  Matrix s = (queries * keys.transpose()) * scale;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double peak = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - peak).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

namespace detail {

inline constexpr Eigen::Index kAttentionRowBlock = 256;

/// softmax(Q K^T / sqrt(d)) V evaluated in row blocks so the score matrix
/// never exceeds kAttentionRowBlock x (number of keys).
/// Scores are formed transposed (keys x block) so each query's softmax runs
/// down one contiguous column.
inline Matrix blocked_attention(const Matrix& queries, const Matrix& keys, const Matrix& values) {
  if (queries.cols() != keys.cols()) throw DimensionError("attention: query/key width mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  Matrix out(queries.rows(), values.cols());
  Matrix scores;
  for (Eigen::Index start = 0; start < queries.rows(); start += kAttentionRowBlock) {
    const Eigen::Index rows = std::min(kAttentionRowBlock, queries.rows() - start);
    scores.noalias() = keys * queries.middleRows(start, rows).transpose();
    for (Eigen::Index j = 0; j < rows; ++j) {
      auto col = scores.col(j);
      const double peak = col.maxCoeff();
      col = ((col.array() - peak) * scale).exp().matrix();
      col /= col.sum();
    }
    out.middleRows(start, rows).noalias() = scores.transpose() * values;
  }
  return out;
}

inline void check_projection(const Matrix& tokens, const AttentionProjection& proj) {
  proj.validate();
  if (tokens.cols() != proj.input_dim()) {
    throw DimensionError("attention: tokens have c=" + std::to_string(tokens.cols()) +
                         ", projection expects c=" + std::to_string(proj.input_dim()));
  }
}

}  // namespace detail

/// M x d output; Q, K, V all projected from the tokens.
inline Matrix full_attention(const Matrix& tokens, const AttentionProjection& proj) {
  detail::check_projection(tokens, proj);
  const Matrix q = tokens * proj.query;
  const Matrix k = tokens * proj.key;
  const Matrix v = tokens * proj.value;
  return detail::blocked_attention(q, k, v);
}

inline Matrix full_attention(const TokenMatrix& tokens, const AttentionProjection& proj) {
  return full_attention(tokens.values(), proj);
}

/// M x d output; queries from the tokens, keys and values from the anchors.
inline Matrix anchor_attention(const Matrix& tokens, const Matrix& anchors,
                               const AttentionProjection& proj) {
  detail::check_projection(tokens, proj);
  if (anchors.cols() != tokens.cols()) {
    throw DimensionError("anchor_attention: anchors have c=" + std::to_string(anchors.cols()) +
                         ", tokens have c=" + std::to_string(tokens.cols()));
  }
  const Matrix q = tokens * proj.query;
  const Matrix k = anchors * proj.key;
  const Matrix v = anchors * proj.value;
  return detail::blocked_attention(q, k, v);
}

inline Matrix anchor_attention(const TokenMatrix& tokens, const AnchorSet& anchors,
                               const AttentionProjection& proj) {
  return anchor_attention(tokens.values(), anchors.values, proj);
}

enum class KernelMode { full, anchor, fphi };

inline std::string to_string(KernelMode mode) {
  switch (mode) {
    case KernelMode::full: return "full";
    case KernelMode::anchor: return "anchor";
    case KernelMode::fphi: return "fphi";
  }
  return "unknown";
}

struct FlopQuery {
  std::uint64_t tokens = 0;   // M
  std::uint64_t anchors = 0;  // A
  std::uint64_t dim = 0;      // c
  std::uint64_t head_dim = 0; // d
  KernelMode mode = KernelMode::full;
  std::vector<std::uint64_t> hidden_dims;  // fphi only
};

/// Multiply-accumulate counts of the kernels above (softmax exponentials excluded):
///   full:   3*M*c*d + 2*M^2*d            (Q,K,V projections; Q K^T; P V)
///   anchor: M*c*d + 2*A*c*d + 2*M*A*d    (Q from tokens; K,V from anchors; Q K^T; P V)
///   fphi:   M*sum(in_i*out_i) + A*M*c    (assignment MLP over c->hidden->A; pooling R Z)
inline std::uint64_t flop_count(const FlopQuery& q) {
  if (q.tokens == 0 || q.dim == 0) throw ConfigError("flop_count: extents must be positive");
  switch (q.mode) {
    case KernelMode::full:
      if (q.head_dim == 0) throw ConfigError("flop_count: head_dim must be positive");
      return 3 * q.tokens * q.dim * q.head_dim + 2 * q.tokens * q.tokens * q.head_dim;
    case KernelMode::anchor:
      if (q.head_dim == 0 || q.anchors == 0) throw ConfigError("flop_count: extents must be positive");
      return q.tokens * q.dim * q.head_dim + 2 * q.anchors * q.dim * q.head_dim +
             2 * q.tokens * q.anchors * q.head_dim;
    case KernelMode::fphi: {
      if (q.anchors == 0) throw ConfigError("flop_count: anchors must be positive");
      std::uint64_t per_token = 0;
      std::uint64_t in = q.dim;
      for (auto h : q.hidden_dims) {
        per_token += in * h;
        in = h;
      }
      per_token += in * q.anchors;
      return q.tokens * per_token + q.anchors * q.tokens * q.dim;
    }
  }
  return 0;
}

}  // namespace vala
