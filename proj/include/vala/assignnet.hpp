// SPDX-License-Identifier: Apache-2.0
//
// Assignment network: a per-token MLP mapping a c-dimensional token to A
// anchor logits, with hand-written backpropagation and Adam.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vala/error.hpp"
#include "vala/rng.hpp"
#include "vala/tokens.hpp"

namespace vala {

/// Hidden-layer nonlinearity. The output layer is always linear.
enum class Activation { tanh };

inline std::string to_string(Activation act) {
  switch (act) {
    case Activation::tanh: return "tanh";
  }
  return "unknown";
}

inline Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + name + "'");
}

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out

  Eigen::Index in_dim() const noexcept { return weight.cols(); }
  Eigen::Index out_dim() const noexcept { return weight.rows(); }
};

struct AssignmentNetwork {
  std::vector<DenseLayer> layers;
  Activation hidden_activation = Activation::tanh;

  Eigen::Index input_dim() const { return layers.front().in_dim(); }
  Eigen::Index output_dim() const { return layers.back().out_dim(); }

  /// Throws unless layer extents chain and every parameter is finite.
  void validate() const {
    if (layers.empty()) throw DimensionError("assignment network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& layer = layers[i];
      if (layer.bias.size() != layer.out_dim()) {
        throw DimensionError("layer " + std::to_string(i) + " bias length mismatch");
      }
      if (i + 1 < layers.size() && layers[i + 1].in_dim() != layer.out_dim()) {
        throw DimensionError("layer " + std::to_string(i) + " output " +
                             std::to_string(layer.out_dim()) + " != layer " +
                             std::to_string(i + 1) + " input " +
                             std::to_string(layers[i + 1].in_dim()));
      }
      if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
        throw NumericalError("layer " + std::to_string(i) + " has non-finite parameters");
      }
    }
  }
};

/// Parameter-shaped arrays; used for gradients and Adam moments.
struct GradientBundle {
  std::vector<DenseLayer> layers;
};

inline GradientBundle zeros_like(const AssignmentNetwork& net) {
  GradientBundle out;
  for (const auto& layer : net.layers) {
    out.layers.push_back({Matrix::Zero(layer.out_dim(), layer.in_dim()),
                          Vector::Zero(layer.out_dim())});
  }
  return out;
}

inline void check_same_shape(const AssignmentNetwork& net, const GradientBundle& g,
                             const char* what) {
  if (g.layers.size() != net.layers.size()) {
    throw DimensionError(std::string(what) + ": layer count mismatch");
  }
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (g.layers[i].weight.rows() != net.layers[i].weight.rows() ||
        g.layers[i].weight.cols() != net.layers[i].weight.cols() ||
        g.layers[i].bias.size() != net.layers[i].bias.size()) {
      throw DimensionError(std::string(what) + ": shape mismatch at layer " + std::to_string(i));
    }
  }
}

struct NetworkShape {
  Eigen::Index input_dim = 0;   // c
  Eigen::Index anchors = 0;     // A
  std::vector<Eigen::Index> hidden_dims = {128, 128};
  std::uint64_t seed = 0;
};

/// Xavier-uniform weights, zero biases. Layers are filled in order, each
/// weight matrix row-major, from a single SeededRng stream.
inline AssignmentNetwork init_network(const NetworkShape& shape) {
  if (shape.input_dim < 1 || shape.anchors < 1) {
    throw ConfigError("assignment network needs input_dim >= 1 and anchors >= 1");
  }
  std::vector<Eigen::Index> dims;
  dims.push_back(shape.input_dim);
  for (auto h : shape.hidden_dims) {
    if (h < 1) throw ConfigError("hidden layer width must be >= 1");
    dims.push_back(h);
  }
  dims.push_back(shape.anchors);

  SeededRng rng(shape.seed);
  AssignmentNetwork net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const Eigen::Index fan_in = dims[i];
    const Eigen::Index fan_out = dims[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer{Matrix(fan_out, fan_in), Vector::Zero(fan_out)};
    for (Eigen::Index r = 0; r < fan_out; ++r)
      for (Eigen::Index c = 0; c < fan_in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

namespace detail {

inline Matrix apply_activation(Activation act, Matrix pre) {
  switch (act) {
    case Activation::tanh: return pre.array().tanh().matrix();
  }
  return pre;
}

/// d act / d pre, expressed through the activation output.
inline Matrix activation_slope(Activation act, const Matrix& out) {
  switch (act) {
    case Activation::tanh: return (1.0 - out.array().square()).matrix();
  }
  return Matrix::Ones(out.rows(), out.cols());
}

/// Column-major activations: entry i is the input of layer i (c x M for i = 0),
/// the last entry is the logit matrix.
inline std::vector<Matrix> forward_trace(const AssignmentNetwork& net, const Matrix& tokens) {
  if (tokens.cols() != net.input_dim()) {
    throw DimensionError("assignment network expects c=" + std::to_string(net.input_dim()) +
                         ", tokens have c=" + std::to_string(tokens.cols()));
  }
  std::vector<Matrix> trace;
  trace.reserve(net.layers.size() + 1);
  trace.push_back(tokens.transpose());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    Matrix pre = layer.weight * trace.back();
    pre.colwise() += layer.bias;
    const bool hidden = i + 1 < net.layers.size();
    trace.push_back(hidden ? apply_activation(net.hidden_activation, std::move(pre)) : std::move(pre));
  }
  return trace;
}

}  // namespace detail

/// A x M logits; column m is f(z_m).
inline Matrix forward(const AssignmentNetwork& net, const Matrix& tokens) {
  return std::move(detail::forward_trace(net, tokens).back());
}

inline Matrix forward(const AssignmentNetwork& net, const TokenMatrix& tokens) {
  return forward(net, tokens.values());
}

/// Parameter gradients of <upstream, logits>, i.e. chain rule with dL/dlogits.
/// Token contributions are accumulated by matrix products over the token axis.
inline GradientBundle backward(const AssignmentNetwork& net, const Matrix& tokens,
                               const Matrix& upstream) {
  auto trace = detail::forward_trace(net, tokens);
  if (upstream.rows() != net.output_dim() || upstream.cols() != tokens.rows()) {
    throw DimensionError("upstream gradient must be " + std::to_string(net.output_dim()) + "x" +
                         std::to_string(tokens.rows()) + ", got " +
                         std::to_string(upstream.rows()) + "x" + std::to_string(upstream.cols()));
  }
  GradientBundle grads;
  grads.layers.resize(net.layers.size());
  Matrix delta = upstream;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const Matrix& input = trace[i];
    grads.layers[i].weight = delta * input.transpose();
    grads.layers[i].bias = delta.rowwise().sum();
    if (i > 0) {
      Matrix back = net.layers[i].weight.transpose() * delta;
      delta = back.cwiseProduct(detail::activation_slope(net.hidden_activation, input));
    }
  }
  return grads;
}

inline GradientBundle backward(const AssignmentNetwork& net, const TokenMatrix& tokens,
                               const Matrix& upstream) {
  return backward(net, tokens.values(), upstream);
}

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  GradientBundle first_moment;
  GradientBundle second_moment;
  std::uint64_t step_count = 0;
  AdamHyper hyper;

  static AdamState fresh(const AssignmentNetwork& net, AdamHyper hyper = {}) {
    return AdamState{zeros_like(net), zeros_like(net), 0, hyper};
  }
};

/// Bias-corrected Adam update.
inline std::pair<AssignmentNetwork, AdamState> adam_step(AssignmentNetwork net,
                                                         const GradientBundle& grads,
                                                         AdamState state) {
  check_same_shape(net, grads, "adam_step gradients");
  check_same_shape(net, state.first_moment, "adam_step first moment");
  check_same_shape(net, state.second_moment, "adam_step second moment");

  const auto& h = state.hyper;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);

  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g.cwiseProduct(g);
    auto m_hat = m.array() / correction1;
    auto v_hat = v.array() / correction2;
    param.array() -= h.lr * m_hat / (v_hat.sqrt() + h.epsilon);
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    update(net.layers[i].weight, state.first_moment.layers[i].weight,
           state.second_moment.layers[i].weight, grads.layers[i].weight);
    update(net.layers[i].bias, state.first_moment.layers[i].bias,
           state.second_moment.layers[i].bias, grads.layers[i].bias);
  }
  return {std::move(net), std::move(state)};
}

}  // namespace vala
