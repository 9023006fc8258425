// SPDX-License-Identifier: Apache-2.0
//
// Soft assignment, anchor pooling and the training objective
//
//   L = sum_a L_contrast(a) + lambda_vi * L_vi
//
// with exact gradients with respect to the assignment logits.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "vala/assignnet.hpp"
#include "vala/error.hpp"
#include "vala/tokens.hpp"

namespace vala {

/// A x M responsibilities; every column is a categorical distribution over anchors.
struct AssignmentMatrix {
  Matrix values;

  Eigen::Index anchors() const noexcept { return values.rows(); }
  Eigen::Index tokens() const noexcept { return values.cols(); }
};

/// A x c anchors, C = R * Z.
struct AnchorSet {
  Matrix values;

  Eigen::Index anchors() const noexcept { return values.rows(); }
  Eigen::Index dim() const noexcept { return values.cols(); }
};

enum class PriorMode { none, uniform_categorical, gaussian };

inline std::string to_string(PriorMode mode) {
  switch (mode) {
    case PriorMode::none: return "none";
    case PriorMode::uniform_categorical: return "uniform";
    case PriorMode::gaussian: return "gaussian";
  }
  return "unknown";
}

inline PriorMode parse_prior_mode(const std::string& name) {
  if (name == "none") return PriorMode::none;
  if (name == "uniform" || name == "categorical" || name == "uniform_categorical") {
    return PriorMode::uniform_categorical;
  }
  if (name == "gaussian") return PriorMode::gaussian;
  throw ConfigError("unknown prior mode '" + name + "' (expected none|uniform|gaussian)");
}

struct VALAConfig {
  Eigen::Index anchors = 512;
  Eigen::Index top_k = 8;
  double temperature = 0.1;
  double lambda_vi = 0.1;
  PriorMode prior = PriorMode::uniform_categorical;
  double sim_epsilon = 1e-8;
  double variance_floor = 1e-6;
  // Divide the categorical KL by M instead of summing over tokens.
  bool vi_token_mean = false;

  void validate() const {
    if (anchors < 1) throw ConfigError("anchors must be >= 1");
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(lambda_vi >= 0.0)) throw ConfigError("lambda_vi must be >= 0");
    if (!(sim_epsilon > 0.0)) throw ConfigError("sim_epsilon must be > 0");
    if (!(variance_floor > 0.0)) throw ConfigError("variance_floor must be > 0");
  }

  void validate_for(Eigen::Index tokens) const {
    validate();
    if (top_k > tokens) {
      throw ConfigError("top_k=" + std::to_string(top_k) + " exceeds token count M=" +
                        std::to_string(tokens));
    }
  }
};

/// Column-wise softmax over the anchor axis, max-subtracted.
inline AssignmentMatrix soft_assign(const Matrix& logits) {
  if (!logits.allFinite()) throw NumericalError("soft_assign: non-finite logits");
  Matrix r(logits.rows(), logits.cols());
  for (Eigen::Index m = 0; m < logits.cols(); ++m) {
    const double peak = logits.col(m).maxCoeff();
    r.col(m) = (logits.col(m).array() - peak).exp().matrix();
    r.col(m) /= r.col(m).sum();
  }
  return {std::move(r)};
}

/// Pulls dL/dR back through the column softmax: dL/dlogit = r * (g - <r, g>).
inline Matrix softmax_backward(const AssignmentMatrix& r, const Matrix& grad_r) {
  const Eigen::RowVectorXd expected = r.values.cwiseProduct(grad_r).colwise().sum();
  return r.values.cwiseProduct(grad_r - Matrix::Ones(r.anchors(), 1) * expected);
}

/// Responsibility-weighted sum (not average) of tokens per anchor.
inline AnchorSet pool_anchors(const AssignmentMatrix& r, const Matrix& tokens) {
  if (r.tokens() != tokens.rows()) {
    throw DimensionError("pool_anchors: R has " + std::to_string(r.tokens()) +
                         " columns but Z has " + std::to_string(tokens.rows()) + " rows");
  }
  return {r.values * tokens};
}

inline AnchorSet pool_anchors(const AssignmentMatrix& r, const TokenMatrix& tokens) {
  return pool_anchors(r, tokens.values());
}

/// sum_m sum_a r_am log(r_am * A), with 0 log 0 = 0.
inline double kl_uniform(const AssignmentMatrix& r) {
  const double count = static_cast<double>(r.anchors());
  double total = 0.0;
  for (Eigen::Index m = 0; m < r.tokens(); ++m) {
    for (Eigen::Index a = 0; a < r.anchors(); ++a) {
      const double p = r.values(a, m);
      if (p > 0.0) total += p * std::log(p * count);
    }
  }
  return total;
}

/// Gradient of kl_uniform with respect to the logits that produced R.
inline Matrix kl_uniform_grad(const AssignmentMatrix& r) {
  const double count = static_cast<double>(r.anchors());
  Matrix out(r.anchors(), r.tokens());
  for (Eigen::Index m = 0; m < r.tokens(); ++m) {
    double column_kl = 0.0;
    for (Eigen::Index a = 0; a < r.anchors(); ++a) {
      const double p = r.values(a, m);
      if (p > 0.0) column_kl += p * std::log(p * count);
    }
    for (Eigen::Index a = 0; a < r.anchors(); ++a) {
      const double p = r.values(a, m);
      out(a, m) = p > 0.0 ? p * (std::log(p * count) - column_kl) : 0.0;
    }
  }
  return out;
}

template <typename U, typename V>
double cosine_sim(const Eigen::MatrixBase<U>& u, const Eigen::MatrixBase<V>& v,
                  double epsilon = 1e-8) {
  if (u.size() != v.size()) throw DimensionError("cosine_sim: length mismatch");
  return u.cwiseProduct(v).sum() / (u.norm() * v.norm() + epsilon);
}

/// The k tokens with the largest responsibility for anchor a, ties to the
/// lower token index, returned in descending responsibility order.
inline std::vector<Eigen::Index> top_k_select(const AssignmentMatrix& r, Eigen::Index anchor,
                                              Eigen::Index k) {
  if (k < 1 || k > r.tokens()) {
    throw ConfigError("top_k=" + std::to_string(k) + " must lie in [1, M=" +
                      std::to_string(r.tokens()) + "]");
  }
  if (anchor < 0 || anchor >= r.anchors()) throw DimensionError("top_k_select: bad anchor index");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(r.tokens()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto row = r.values.row(anchor);
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](Eigen::Index x, Eigen::Index y) {
                      if (row(x) != row(y)) return row(x) > row(y);
                      return x < y;
                    });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

namespace detail {

/// Per-anchor contrastive terms and dL/dC (A x c). Top-k sets are held fixed.
struct ContrastiveParts {
  double loss = 0.0;
  Matrix grad_anchors;
};

inline ContrastiveParts contrastive_parts(const AnchorSet& anchors, const Matrix& tokens,
                                          const AssignmentMatrix& r, const VALAConfig& cfg,
                                          bool with_grad) {
  if (anchors.dim() != tokens.cols() || r.tokens() != tokens.rows() ||
      r.anchors() != anchors.anchors()) {
    throw DimensionError("contrastive loss: inconsistent A, M or c");
  }
  cfg.validate_for(tokens.rows());
  const Eigen::Index count = tokens.rows();
  const double inv_tau = 1.0 / cfg.temperature;
  const double inv_k = 1.0 / static_cast<double>(cfg.top_k);
  const Vector token_norms = tokens.rowwise().norm();

  ContrastiveParts out;
  if (with_grad) out.grad_anchors = Matrix::Zero(anchors.anchors(), anchors.dim());

  Vector dots(count), denom(count), logits(count);
  for (Eigen::Index a = 0; a < anchors.anchors(); ++a) {
    const auto c = anchors.values.row(a);
    const double c_norm = c.norm();
    dots = tokens * c.transpose();
    denom = (c_norm * token_norms.array() + cfg.sim_epsilon).matrix();
    logits = (dots.array() / denom.array() * inv_tau).matrix();

    const double peak = logits.maxCoeff();
    const Vector shifted_exp = (logits.array() - peak).exp().matrix();
    const double sum_exp = shifted_exp.sum();
    const double log_norm = peak + std::log(sum_exp);

    const auto positives = top_k_select(r, a, cfg.top_k);
    double term = 0.0;
    for (auto m : positives) term += log_norm - logits(m);
    out.loss += term * inv_k;

    if (!with_grad) continue;
    // w_m = dL_a/dlogit_m * (1/tau)
    Vector weight = shifted_exp / sum_exp;
    for (auto m : positives) weight(m) -= inv_k;
    weight *= inv_tau;
    // d cos / d c = z / D - (c.z) |z| c / (|c| D^2)
    const Vector along_z = weight.cwiseQuotient(denom);
    Eigen::RowVectorXd g = along_z.transpose() * tokens;
    if (c_norm > 0.0) {
      const double radial =
          (weight.array() * dots.array() * token_norms.array() / denom.array().square()).sum();
      g -= (radial / c_norm) * c;
    }
    out.grad_anchors.row(a) = g;
  }
  return out;
}

}  // namespace detail

/// sum_a (1/k) sum_{m in P_a} -log softmax_m(sim(c_a, z_m) / tau), denominator over all M tokens.
inline double contrastive_loss(const AnchorSet& anchors, const Matrix& tokens,
                               const AssignmentMatrix& r, const VALAConfig& cfg) {
  return detail::contrastive_parts(anchors, tokens, r, cfg, false).loss;
}

/// dL_contrast/dlogits through C = R Z and the softmax; Z and the top-k sets are constant.
inline Matrix contrastive_grad(const AnchorSet& anchors, const Matrix& tokens,
                               const AssignmentMatrix& r, const VALAConfig& cfg) {
  auto parts = detail::contrastive_parts(anchors, tokens, r, cfg, true);
  return softmax_backward(r, parts.grad_anchors * tokens.transpose());
}

struct GaussianPosteriorStats {
  Matrix mean;      // A x c
  Matrix variance;  // A x c, floored
  Vector mass;      // A, sum_m r_am
};

inline constexpr double kDegenerateAnchorMass = 1e-12;

/// Responsibility-weighted per-anchor moments. Anchors with mass below
/// 1e-12 get mean 0 and the floor variance.
inline GaussianPosteriorStats gaussian_posterior(const AssignmentMatrix& r, const Matrix& tokens,
                                                 double variance_floor) {
  if (r.tokens() != tokens.rows()) throw DimensionError("gaussian_posterior: R/Z mismatch");
  GaussianPosteriorStats s{Matrix::Zero(r.anchors(), tokens.cols()),
                           Matrix::Constant(r.anchors(), tokens.cols(), variance_floor),
                           r.values.rowwise().sum()};
  for (Eigen::Index a = 0; a < r.anchors(); ++a) {
    const double mass = s.mass(a);
    if (mass < kDegenerateAnchorMass) continue;
    const Eigen::RowVectorXd mu = r.values.row(a) * tokens / mass;
    const Matrix centered = tokens.rowwise() - mu;
    const Eigen::RowVectorXd var = r.values.row(a) * centered.array().square().matrix() / mass;
    s.mean.row(a) = mu;
    s.variance.row(a) = var.array().max(variance_floor).matrix();
  }
  return s;
}

/// sum_a 1/2 sum_i (sigma^2 + mu^2 - 1 - log sigma^2) using gaussian_posterior moments.
inline double gaussian_prior_kl(const AssignmentMatrix& r, const Matrix& tokens,
                                double variance_floor = 1e-6) {
  const auto s = gaussian_posterior(r, tokens, variance_floor);
  return 0.5 * (s.variance.array() + s.mean.array().square() - 1.0 - s.variance.array().log()).sum();
}

inline Matrix gaussian_prior_kl_grad(const AssignmentMatrix& r, const Matrix& tokens,
                                     double variance_floor = 1e-6) {
  const auto s = gaussian_posterior(r, tokens, variance_floor);
  Matrix grad_r = Matrix::Zero(r.anchors(), r.tokens());
  for (Eigen::Index a = 0; a < r.anchors(); ++a) {
    const double mass = s.mass(a);
    if (mass < kDegenerateAnchorMass) continue;
    const Eigen::RowVectorXd mu = s.mean.row(a);
    const Matrix centered = tokens.rowwise() - mu;
    const Eigen::RowVectorXd raw_var =
        r.values.row(a) * centered.array().square().matrix() / mass;
    // dKL/dvar_i, zero where the floor is active.
    Eigen::RowVectorXd var_slope(tokens.cols());
    for (Eigen::Index i = 0; i < tokens.cols(); ++i) {
      var_slope(i) = raw_var(i) > variance_floor ? 0.5 * (1.0 - 1.0 / raw_var(i)) : 0.0;
    }
    // dmu_i/dr_m = (z_mi - mu_i)/S, dvar_i/dr_m = ((z_mi - mu_i)^2 - var_i)/S
    const Matrix var_change = centered.array().square().matrix().rowwise() - raw_var;
    grad_r.row(a) = ((centered * mu.transpose()) + var_change * var_slope.transpose()).transpose() / mass;
  }
  return softmax_backward(r, grad_r);
}

struct ObjectiveValue {
  double total = 0.0;
  double contrastive = 0.0;
  double regularizer = 0.0;  // lambda_vi * L_vi
  Matrix grad_logits;        // A x M
};

/// Value and logit gradient of the full objective for the given logits.
inline ObjectiveValue evaluate_objective(const Matrix& logits, const Matrix& tokens,
                                         const VALAConfig& cfg) {
  const AssignmentMatrix r = soft_assign(logits);
  const AnchorSet anchors = pool_anchors(r, tokens);
  auto parts = detail::contrastive_parts(anchors, tokens, r, cfg, true);

  ObjectiveValue out;
  out.contrastive = parts.loss;
  out.grad_logits = softmax_backward(r, parts.grad_anchors * tokens.transpose());

  const double weight = cfg.lambda_vi;
  if (cfg.prior == PriorMode::uniform_categorical && weight != 0.0) {
    const double scale = cfg.vi_token_mean ? 1.0 / static_cast<double>(tokens.rows()) : 1.0;
    out.regularizer = weight * scale * kl_uniform(r);
    out.grad_logits += (weight * scale) * kl_uniform_grad(r);
  } else if (cfg.prior == PriorMode::gaussian && weight != 0.0) {
    out.regularizer = weight * gaussian_prior_kl(r, tokens, cfg.variance_floor);
    out.grad_logits += weight * gaussian_prior_kl_grad(r, tokens, cfg.variance_floor);
  }
  out.total = out.contrastive + out.regularizer;
  return out;
}

struct LossAndGradients {
  ObjectiveValue objective;
  GradientBundle grads;
};

/// Objective value and its gradient with respect to every network parameter.
inline LossAndGradients total_loss(const AssignmentNetwork& net, const Matrix& tokens,
                                   const VALAConfig& cfg) {
  const Matrix logits = forward(net, tokens);
  LossAndGradients out;
  out.objective = evaluate_objective(logits, tokens, cfg);
  out.grads = backward(net, tokens, out.objective.grad_logits);
  return out;
}

}  // namespace vala
