// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint = plain-text manifest terminated by a line "end", followed by
// concatenated VLT1 tensors: weight_0, bias_0, ..., then the Adam first and
// second moments in the same order.
//
//   vala-checkpoint 1
//   activation tanh
//   step_count 120
//   adam <lr> <beta1> <beta2> <epsilon>
//   layers 3
//   layer 0 <out> <in>
//   ...
//   end
#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "vala/assignnet.hpp"
#include "vala/tensor_io.hpp"

namespace vala {

struct Checkpoint {
  AssignmentNetwork net;
  AdamState adam;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_bundle(std::ostream& out, const GradientBundle& bundle) {
  for (const auto& layer : bundle.layers) {
    write_tensor(out, to_raw(layer.weight));
    write_tensor(out, to_raw(layer.bias));
  }
}

inline GradientBundle read_bundle(std::istream& in, const AssignmentNetwork& shape_of) {
  GradientBundle bundle;
  for (const auto& ref : shape_of.layers) {
    DenseLayer layer{to_matrix(read_tensor(in)), to_vector(read_tensor(in))};
    if (layer.weight.rows() != ref.weight.rows() || layer.weight.cols() != ref.weight.cols() ||
        layer.bias.size() != ref.bias.size()) {
      throw DimensionError("checkpoint tensor shape disagrees with manifest");
    }
    bundle.layers.push_back(std::move(layer));
  }
  return bundle;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const AssignmentNetwork& net,
                            const AdamState& adam) {
  net.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrc::io_failure, "cannot open " + path + " for writing");
  out << "vala-checkpoint 1\n";
  out << "activation " << to_string(net.hidden_activation) << "\n";
  out << "step_count " << adam.step_count << "\n";
  out << "adam " << detail::format_double(adam.hyper.lr) << " "
      << detail::format_double(adam.hyper.beta1) << " "
      << detail::format_double(adam.hyper.beta2) << " "
      << detail::format_double(adam.hyper.epsilon) << "\n";
  out << "layers " << net.layers.size() << "\n";
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    out << "layer " << i << " " << net.layers[i].out_dim() << " " << net.layers[i].in_dim() << "\n";
  }
  out << "end\n";
  GradientBundle params;
  params.layers = net.layers;
  detail::write_bundle(out, params);
  detail::write_bundle(out, adam.first_moment);
  detail::write_bundle(out, adam.second_moment);
  if (!out) throw FormatError(FormatErrc::io_failure, "write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrc::io_failure, "cannot open " + path);

  auto next_line = [&](const char* expected_key) {
    std::string line;
    if (!std::getline(in, line)) {
      throw FormatError(FormatErrc::truncated, std::string("manifest ended before '") +
                                                   expected_key + "'");
    }
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key != expected_key) {
      throw FormatError(FormatErrc::bad_magic, std::string("expected manifest key '") +
                                                   expected_key + "', got '" + key + "'");
    }
    return fields.str().substr(key.size());
  };

  Checkpoint ck;
  {
    std::istringstream f(next_line("vala-checkpoint"));
    int version = 0;
    f >> version;
    if (version != 1) throw FormatError(FormatErrc::bad_magic, "unsupported checkpoint version");
  }
  {
    std::istringstream f(next_line("activation"));
    std::string name;
    f >> name;
    ck.net.hidden_activation = parse_activation(name);
  }
  {
    std::istringstream f(next_line("step_count"));
    f >> ck.adam.step_count;
  }
  {
    std::istringstream f(next_line("adam"));
    f >> ck.adam.hyper.lr >> ck.adam.hyper.beta1 >> ck.adam.hyper.beta2 >> ck.adam.hyper.epsilon;
    if (!f) throw FormatError(FormatErrc::truncated, "adam line needs 4 values");
  }
  std::size_t layer_count = 0;
  {
    std::istringstream f(next_line("layers"));
    f >> layer_count;
    if (!f || layer_count == 0 || layer_count > 64) {
      throw FormatError(FormatErrc::extent_overflow, "bad layer count");
    }
  }
  for (std::size_t i = 0; i < layer_count; ++i) {
    std::istringstream f(next_line("layer"));
    std::size_t index = 0;
    Eigen::Index rows = 0, cols = 0;
    f >> index >> rows >> cols;
    if (!f || index != i || rows < 1 || cols < 1) {
      throw FormatError(FormatErrc::truncated, "malformed layer line " + std::to_string(i));
    }
    ck.net.layers.push_back({Matrix::Zero(rows, cols), Vector::Zero(rows)});
  }
  next_line("end");

  ck.net.layers = detail::read_bundle(in, ck.net).layers;
  ck.adam.first_moment = detail::read_bundle(in, ck.net);
  ck.adam.second_moment = detail::read_bundle(in, ck.net);
  ck.net.validate();
  return ck;
}

}  // namespace vala
