// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "vala/error.hpp"

namespace vala {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Frame and spatial extents of a latent video tensor.
struct LatentShape {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t tokens() const noexcept { return frames * height * width; }
  friend bool operator==(const LatentShape&, const LatentShape&) = default;
};

/// Dense frames x channels x height x width latent, stored in that order.
class LatentTensor {
 public:
  LatentTensor(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width)
      : frames_(frames), channels_(channels), height_(height), width_(width),
        data_(frames * channels * height * width, 0.0) {
    if (frames == 0 || channels == 0 || height == 0 || width == 0) {
      throw DimensionError("latent tensor extents must all be >= 1");
    }
  }

  LatentTensor(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width,
               std::vector<double> data)
      : LatentTensor(frames, channels, height, width) {
    if (data.size() != data_.size()) {
      throw DimensionError("latent tensor payload has " + std::to_string(data.size()) +
                           " values, expected " + std::to_string(data_.size()));
    }
    for (double v : data) {
      if (!std::isfinite(v)) throw NumericalError("latent tensor contains a non-finite value");
    }
    data_ = std::move(data);
  }

  std::size_t frames() const noexcept { return frames_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  LatentShape shape() const noexcept { return {frames_, height_, width_}; }

  double& operator()(std::size_t f, std::size_t ch, std::size_t y, std::size_t x) {
    return data_[index(f, ch, y, x)];
  }
  double operator()(std::size_t f, std::size_t ch, std::size_t y, std::size_t x) const {
    return data_[index(f, ch, y, x)];
  }

  const std::vector<double>& values() const noexcept { return data_; }

  friend bool operator==(const LatentTensor&, const LatentTensor&) = default;

 private:
  std::size_t index(std::size_t f, std::size_t ch, std::size_t y, std::size_t x) const noexcept {
    return ((f * channels_ + ch) * height_ + y) * width_ + x;
  }

  std::size_t frames_, channels_, height_, width_;
  std::vector<double> data_;
};

/// M x c token matrix, one row per spatiotemporal position.
class TokenMatrix {
 public:
  explicit TokenMatrix(Matrix data, std::optional<LatentShape> provenance = std::nullopt)
      : data_(std::move(data)), provenance_(provenance) {
    if (data_.rows() < 1 || data_.cols() < 1) {
      throw DimensionError("token matrix must have M >= 1 and c >= 1, got " +
                           std::to_string(data_.rows()) + "x" + std::to_string(data_.cols()));
    }
    if (!data_.allFinite()) throw NumericalError("token matrix contains a non-finite value");
    if (provenance_ && provenance_->tokens() != static_cast<std::size_t>(data_.rows())) {
      throw DimensionError("provenance implies M=" + std::to_string(provenance_->tokens()) +
                           " but matrix has M=" + std::to_string(data_.rows()));
    }
  }

  Eigen::Index tokens() const noexcept { return data_.rows(); }
  Eigen::Index dim() const noexcept { return data_.cols(); }
  const Matrix& values() const noexcept { return data_; }
  auto row(Eigen::Index m) const { return data_.row(m); }
  const std::optional<LatentShape>& provenance() const noexcept { return provenance_; }

 private:
  Matrix data_;
  std::optional<LatentShape> provenance_;
};

/// Token m = f*(h*w) + y*w + x holds the channel vector at frame f, pixel (y, x).
inline TokenMatrix flatten(const LatentTensor& latent) {
  const std::size_t hw = latent.height() * latent.width();
  Matrix out(static_cast<Eigen::Index>(latent.frames() * hw),
             static_cast<Eigen::Index>(latent.channels()));
  for (std::size_t f = 0; f < latent.frames(); ++f) {
    for (std::size_t y = 0; y < latent.height(); ++y) {
      for (std::size_t x = 0; x < latent.width(); ++x) {
        const auto m = static_cast<Eigen::Index>(f * hw + y * latent.width() + x);
        for (std::size_t ch = 0; ch < latent.channels(); ++ch) {
          out(m, static_cast<Eigen::Index>(ch)) = latent(f, ch, y, x);
        }
      }
    }
  }
  return TokenMatrix(std::move(out), latent.shape());
}

inline LatentTensor unflatten(const TokenMatrix& tokens, const LatentShape& shape) {
  if (shape.tokens() != static_cast<std::size_t>(tokens.tokens())) {
    throw DimensionError("unflatten: expected M=" + std::to_string(shape.tokens()) +
                         " for shape " + std::to_string(shape.frames) + "x" +
                         std::to_string(shape.height) + "x" + std::to_string(shape.width) +
                         ", got M=" + std::to_string(tokens.tokens()));
  }
  const auto channels = static_cast<std::size_t>(tokens.dim());
  LatentTensor out(shape.frames, channels, shape.height, shape.width);
  const std::size_t hw = shape.height * shape.width;
  for (std::size_t f = 0; f < shape.frames; ++f) {
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t x = 0; x < shape.width; ++x) {
        const auto m = static_cast<Eigen::Index>(f * hw + y * shape.width + x);
        for (std::size_t ch = 0; ch < channels; ++ch) {
          out(f, ch, y, x) = tokens.values()(m, static_cast<Eigen::Index>(ch));
        }
      }
    }
  }
  return out;
}

}  // namespace vala
