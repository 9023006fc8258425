// SPDX-License-Identifier: Apache-2.0
//
// Reference clusterings used to judge anchor quality.
#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "vala/error.hpp"
#include "vala/rng.hpp"
#include "vala/tokens.hpp"

namespace vala {

struct KMeansResult {
  Matrix centers;                    // K x c
  std::vector<Eigen::Index> labels;  // M
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after each Lloyd assignment step
  int iterations = 0;
};

struct KMeansOptions {
  Eigen::Index clusters = 8;
  std::uint64_t seed = 0;
  int max_iters = 300;
  double tol = 1e-10;  // max squared center shift
};

namespace detail {

/// Nearest center per row, ties to the lowest center index.
inline double assign_nearest(const Matrix& points, const Matrix& centers,
                             std::vector<Eigen::Index>& labels, Vector& dist2) {
  labels.assign(static_cast<std::size_t>(points.rows()), 0);
  dist2.resize(points.rows());
  double total = 0.0;
  for (Eigen::Index m = 0; m < points.rows(); ++m) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index k = 0; k < centers.rows(); ++k) {
      const double d = (points.row(m) - centers.row(k)).squaredNorm();
      if (d < best) {
        best = d;
        arg = k;
      }
    }
    labels[static_cast<std::size_t>(m)] = arg;
    dist2(m) = best;
    total += best;
  }
  return total;
}

/// k-means++: first center uniform, then proportional to squared distance.
inline Matrix seed_plus_plus(const Matrix& points, Eigen::Index k, SeededRng& rng) {
  const Eigen::Index count = points.rows();
  Matrix centers(k, points.cols());
  centers.row(0) = points.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(count))));
  Vector nearest = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (Eigen::Index j = 1; j < k; ++j) {
    const double total = nearest.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform01() * total;
      double running = 0.0;
      pick = count - 1;
      for (Eigen::Index m = 0; m < count; ++m) {
        running += nearest(m);
        if (running > target) {
          pick = m;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(count)));
    }
    centers.row(j) = points.row(pick);
    nearest = nearest.cwiseMin((points.rowwise() - centers.row(j)).rowwise().squaredNorm());
  }
  return centers;
}

}  // namespace detail

/// Lloyd's algorithm from k-means++ seeds. An emptied cluster is moved to the
/// point farthest from its current center.
inline KMeansResult kmeans(const Matrix& points, const KMeansOptions& opt) {
  if (opt.clusters < 1) throw ConfigError("kmeans: K must be >= 1");
  if (opt.clusters > points.rows()) {
    throw ConfigError("kmeans: K=" + std::to_string(opt.clusters) + " exceeds M=" +
                      std::to_string(points.rows()));
  }
  SeededRng rng(opt.seed);
  KMeansResult res;
  res.centers = detail::seed_plus_plus(points, opt.clusters, rng);
  Vector dist2;
  res.inertia = detail::assign_nearest(points, res.centers, res.labels, dist2);
  res.inertia_history.push_back(res.inertia);

  for (int iter = 0; iter < opt.max_iters; ++iter) {
    Matrix sums = Matrix::Zero(opt.clusters, points.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(opt.clusters), 0);
    for (Eigen::Index m = 0; m < points.rows(); ++m) {
      const auto k = res.labels[static_cast<std::size_t>(m)];
      sums.row(k) += points.row(m);
      ++counts[static_cast<std::size_t>(k)];
    }
    Matrix next = res.centers;
    for (Eigen::Index k = 0; k < opt.clusters; ++k) {
      const auto n = counts[static_cast<std::size_t>(k)];
      if (n > 0) {
        next.row(k) = sums.row(k) / static_cast<double>(n);
      } else {
        Eigen::Index far = 0;
        dist2.maxCoeff(&far);
        next.row(k) = points.row(far);
        dist2(far) = 0.0;
      }
    }
    const double shift = (next - res.centers).rowwise().squaredNorm().maxCoeff();
    res.centers = std::move(next);
    res.inertia = detail::assign_nearest(points, res.centers, res.labels, dist2);
    res.inertia_history.push_back(res.inertia);
    res.iterations = iter + 1;
    if (shift < opt.tol) break;
  }
  return res;
}

inline KMeansResult kmeans(const TokenMatrix& tokens, const KMeansOptions& opt) {
  return kmeans(tokens.values(), opt);
}

/// Mean squared distance from each token to its nearest anchor.
inline double quantization_error(const Matrix& tokens, const Matrix& anchors) {
  if (tokens.cols() != anchors.cols()) {
    throw DimensionError("quantization_error: tokens have c=" + std::to_string(tokens.cols()) +
                         ", anchors have c=" + std::to_string(anchors.cols()));
  }
  if (anchors.rows() < 1) throw DimensionError("quantization_error: no anchors");
  std::vector<Eigen::Index> labels;
  Vector dist2;
  return detail::assign_nearest(tokens, anchors, labels, dist2) /
         static_cast<double>(tokens.rows());
}

}  // namespace vala
