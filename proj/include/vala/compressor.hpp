// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "vala/assignnet.hpp"
#include "vala/objective.hpp"
#include "vala/rng.hpp"

namespace vala {

struct TrainConfig {
  std::int64_t steps = 2000;
  std::int64_t log_every = 100;
  std::uint64_t seed = 0;
  VALAConfig vala;
  AdamHyper adam;
  std::vector<Eigen::Index> hidden_dims = {128, 128};
  // Full batch when empty, otherwise a fresh uniform token subset of this size each step.
  std::optional<Eigen::Index> subsample;

  void validate(Eigen::Index tokens) const {
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (log_every < 1) throw ConfigError("log_every must be >= 1");
    if (subsample) {
      if (*subsample < 1 || *subsample > tokens) {
        throw ConfigError("subsample size must lie in [1, M]");
      }
      vala.validate_for(*subsample);
    } else {
      vala.validate_for(tokens);
    }
  }
};

struct TrainRecord {
  std::int64_t step = 0;
  double total = 0.0;
  double contrastive = 0.0;
  double regularizer = 0.0;
  double entropy = 0.0;

  friend bool operator==(const TrainRecord&, const TrainRecord&) = default;
};

struct TrainReport {
  std::vector<TrainRecord> records;
};

inline void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "step,total,contrastive,regularizer,entropy\n";
  char line[256];
  for (const auto& r : report.records) {
    std::snprintf(line, sizeof line, "%lld,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(r.step), r.total, r.contrastive, r.regularizer, r.entropy);
    out << line;
  }
}

/// Entropy of the marginal anchor usage u_a = (sum_m r_am) / M.
inline double anchor_usage_entropy(const AssignmentMatrix& r) {
  const Vector usage = r.values.rowwise().sum() / static_cast<double>(r.tokens());
  double h = 0.0;
  for (Eigen::Index a = 0; a < usage.size(); ++a) {
    if (usage(a) > 0.0) h -= usage(a) * std::log(usage(a));
  }
  return h;
}

struct TrainResult {
  AssignmentNetwork net;
  AdamState adam;
  TrainReport report;
};

namespace detail {

inline Matrix subsample_rows(const Matrix& tokens, Eigen::Index n, SeededRng& rng) {
  // Partial Fisher-Yates over token indices.
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(tokens.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  Matrix out(n, tokens.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(tokens.rows() - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    out.row(i) = tokens.row(idx[static_cast<std::size_t>(i)]);
  }
  return out;
}

inline void require_finite(double value, std::int64_t step, const char* term) {
  if (!std::isfinite(value)) {
    throw NumericalError("non-finite " + std::string(term) + " loss at step " +
                         std::to_string(step));
  }
}

}  // namespace detail

/// Continues training from an existing network and optimizer state. Each step:
/// logits -> R -> C = R Z -> losses -> gradients -> Adam.
inline TrainResult train_from(const Matrix& tokens, const TrainConfig& cfg, AssignmentNetwork net,
                              AdamState adam) {
  cfg.validate(tokens.rows());
  net.validate();
  if (net.input_dim() != tokens.cols() || net.output_dim() != cfg.vala.anchors) {
    throw DimensionError("network is " + std::to_string(net.input_dim()) + "->" +
                         std::to_string(net.output_dim()) + " but data/config need " +
                         std::to_string(tokens.cols()) + "->" + std::to_string(cfg.vala.anchors));
  }
  SeededRng batch_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  TrainResult result;
  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    const Matrix batch =
        cfg.subsample ? detail::subsample_rows(tokens, *cfg.subsample, batch_rng) : tokens;
    const Matrix logits = forward(net, batch);
    if (!logits.allFinite()) {
      throw NumericalError("non-finite logits at step " + std::to_string(step));
    }
    const ObjectiveValue obj = evaluate_objective(logits, batch, cfg.vala);
    detail::require_finite(obj.contrastive, step, "contrastive");
    detail::require_finite(obj.regularizer, step, "regularizer");
    if (!obj.grad_logits.allFinite()) {
      throw NumericalError("non-finite gradient at step " + std::to_string(step));
    }
    if ((step - 1) % cfg.log_every == 0) {
      result.report.records.push_back({step, obj.total, obj.contrastive, obj.regularizer,
                                       anchor_usage_entropy(soft_assign(logits))});
    }
    GradientBundle grads = backward(net, batch, obj.grad_logits);
    std::tie(net, adam) = adam_step(std::move(net), grads, std::move(adam));
  }
  result.net = std::move(net);
  result.adam = std::move(adam);
  return result;
}

/// Fresh network from cfg.seed, then train_from.
inline TrainResult train(const Matrix& tokens, const TrainConfig& cfg) {
  cfg.validate(tokens.rows());
  AssignmentNetwork net = init_network(
      {tokens.cols(), cfg.vala.anchors, cfg.hidden_dims, cfg.seed});
  AdamState adam = AdamState::fresh(net, cfg.adam);
  return train_from(tokens, cfg, std::move(net), std::move(adam));
}

inline TrainResult train(const TokenMatrix& tokens, const TrainConfig& cfg) {
  return train(tokens.values(), cfg);
}

struct Compressed {
  AssignmentMatrix assignment;
  AnchorSet anchors;
};

/// One forward pass, one softmax, one product.
inline Compressed compress(const Matrix& tokens, const AssignmentNetwork& net) {
  AssignmentMatrix r = soft_assign(forward(net, tokens));
  AnchorSet c = pool_anchors(r, tokens);
  return {std::move(r), std::move(c)};
}

inline Compressed compress(const TokenMatrix& tokens, const AssignmentNetwork& net) {
  return compress(tokens.values(), net);
}

}  // namespace vala
