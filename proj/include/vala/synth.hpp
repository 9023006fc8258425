// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic latents with known structure.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "vala/error.hpp"
#include "vala/rng.hpp"
#include "vala/tokens.hpp"

namespace vala::synth {

struct MixtureSpec {
  Eigen::Index n_clusters = 8;
  Eigen::Index dim = 16;
  Eigen::Index points_per_cluster = 512;
  double center_scale = 1.0;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_clusters < 1) throw ConfigError("mixture needs n_clusters >= 1");
    if (dim < 1) throw ConfigError("mixture needs dim >= 1");
    if (points_per_cluster < 1) throw ConfigError("mixture needs points_per_cluster >= 1");
    if (!(center_scale >= 0.0)) throw ConfigError("center_scale must be >= 0");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  }
};

struct MixtureData {
  TokenMatrix tokens;                // cluster-major: cluster 0's points first
  std::vector<Eigen::Index> labels;
  Matrix centers;                    // n_clusters x dim
};

/// Cluster centers only; they are the first draws of the mixture stream.
inline Matrix mixture_centers(const MixtureSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  Matrix centers(spec.n_clusters, spec.dim);
  for (Eigen::Index k = 0; k < spec.n_clusters; ++k)
    for (Eigen::Index i = 0; i < spec.dim; ++i)
      centers(k, i) = rng.uniform(-spec.center_scale, spec.center_scale);
  return centers;
}

inline double min_center_separation(const Matrix& centers) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < centers.rows(); ++i)
    for (Eigen::Index j = i + 1; j < centers.rows(); ++j)
      best = std::min(best, (centers.row(i) - centers.row(j)).norm());
  return best;
}

/// Centers uniform in [-scale, scale]^c, points = center + N(0, sigma^2 I).
inline MixtureData gaussian_mixture(const MixtureSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  Matrix centers(spec.n_clusters, spec.dim);
  for (Eigen::Index k = 0; k < spec.n_clusters; ++k)
    for (Eigen::Index i = 0; i < spec.dim; ++i)
      centers(k, i) = rng.uniform(-spec.center_scale, spec.center_scale);

  Matrix points(spec.n_clusters * spec.points_per_cluster, spec.dim);
  std::vector<Eigen::Index> labels;
  labels.reserve(static_cast<std::size_t>(points.rows()));
  Eigen::Index m = 0;
  for (Eigen::Index k = 0; k < spec.n_clusters; ++k) {
    for (Eigen::Index p = 0; p < spec.points_per_cluster; ++p, ++m) {
      for (Eigen::Index i = 0; i < spec.dim; ++i) {
        points(m, i) = centers(k, i) + (spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0);
      }
      labels.push_back(k);
    }
  }
  return {TokenMatrix(std::move(points)), std::move(labels), std::move(centers)};
}

/// One random base vector plus small isotropic noise per token; a start
/// point that invites every token onto the same anchor.
inline TokenMatrix near_duplicate_tokens(Eigen::Index tokens, Eigen::Index dim, double noise_sigma,
                                         std::uint64_t seed) {
  if (tokens < 1 || dim < 1) throw ConfigError("near_duplicate_tokens: extents must be >= 1");
  SeededRng rng(seed);
  Vector base(dim);
  for (Eigen::Index i = 0; i < dim; ++i) base(i) = rng.uniform(-1.0, 1.0);
  Matrix z(tokens, dim);
  for (Eigen::Index m = 0; m < tokens; ++m)
    for (Eigen::Index i = 0; i < dim; ++i) z(m, i) = base(i) + noise_sigma * rng.normal();
  return TokenMatrix(std::move(z));
}

struct DriftVideoSpec {
  std::size_t frames = 4;
  std::size_t channels = 4;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t n_objects = 3;
  double drift_per_frame = 1.0;
  std::uint64_t seed = 0;
  double bump_sigma = 1.0;
  double bump_radius = 2.5;  // bumps are exactly zero beyond this distance
};

struct DriftObject {
  double y0 = 0.0, x0 = 0.0;
  double dy = 0.0, dx = 0.0;  // displacement per frame, length drift_per_frame
  Vector signature;           // channel profile

  double center_y(std::size_t f) const { return y0 + dy * static_cast<double>(f); }
  double center_x(std::size_t f) const { return x0 + dx * static_cast<double>(f); }
};

inline std::vector<DriftObject> drift_objects(const DriftVideoSpec& spec) {
  if (spec.frames == 0 || spec.channels == 0 || spec.height == 0 || spec.width == 0) {
    throw ConfigError("drift video extents must be >= 1");
  }
  if (spec.n_objects > spec.height * spec.width) {
    throw ConfigError("drift video: " + std::to_string(spec.n_objects) +
                      " objects exceed h*w=" + std::to_string(spec.height * spec.width));
  }
  SeededRng rng(spec.seed);
  std::vector<DriftObject> objects;
  for (std::size_t o = 0; o < spec.n_objects; ++o) {
    DriftObject obj;
    obj.y0 = rng.uniform(0.0, static_cast<double>(spec.height));
    obj.x0 = rng.uniform(0.0, static_cast<double>(spec.width));
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    obj.dy = spec.drift_per_frame * std::sin(angle);
    obj.dx = spec.drift_per_frame * std::cos(angle);
    obj.signature.resize(static_cast<Eigen::Index>(spec.channels));
    for (Eigen::Index ch = 0; ch < obj.signature.size(); ++ch) obj.signature(ch) = rng.normal();
    objects.push_back(std::move(obj));
  }
  return objects;
}

/// Sum of truncated Gaussian bumps, one per object, each moving by a fixed
/// displacement per frame and carrying its own channel signature.
inline LatentTensor drift_video(const DriftVideoSpec& spec) {
  const auto objects = drift_objects(spec);
  LatentTensor out(spec.frames, spec.channels, spec.height, spec.width);
  const double inv_two_var = 1.0 / (2.0 * spec.bump_sigma * spec.bump_sigma);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    for (const auto& obj : objects) {
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          const double ry = static_cast<double>(y) - obj.center_y(f);
          const double rx = static_cast<double>(x) - obj.center_x(f);
          const double d2 = ry * ry + rx * rx;
          if (d2 > spec.bump_radius * spec.bump_radius) continue;
          const double amp = std::exp(-d2 * inv_two_var);
          for (std::size_t ch = 0; ch < spec.channels; ++ch) {
            out(f, ch, y, x) += amp * obj.signature(static_cast<Eigen::Index>(ch));
          }
        }
      }
    }
  }
  return out;
}

}  // namespace vala::synth
