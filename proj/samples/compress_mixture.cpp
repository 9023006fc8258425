// SPDX-License-Identifier: Apache-2.0
//
// Train an assignment network on a small Gaussian mixture, compress it, and
// compare the anchors against k-means.
#include <cstdio>

#include "vala/vala.hpp"

int main() {
  using namespace vala;

  const auto data = synth::gaussian_mixture({.n_clusters = 4, .dim = 8, .points_per_cluster = 64,
                                             .center_scale = 1.0, .noise_sigma = 0.05, .seed = 7});

  TrainConfig cfg;
  cfg.steps = 300;
  cfg.log_every = 50;
  cfg.seed = 7;
  cfg.vala.anchors = 4;
  cfg.hidden_dims = {32};
  const TrainResult trained = train(data.tokens, cfg);
  for (const auto& r : trained.report.records) {
    std::printf("step %4lld  total %.4f  contrastive %.4f  reg %.4f  entropy %.4f\n",
                static_cast<long long>(r.step), r.total, r.contrastive, r.regularizer, r.entropy);
  }

  const Compressed out = compress(data.tokens, trained.net);
  const auto km = kmeans(data.tokens, {.clusters = 4, .seed = 7});
  std::printf("anchors %lld x %lld, usage entropy %.4f (max %.4f)\n",
              static_cast<long long>(out.anchors.anchors()),
              static_cast<long long>(out.anchors.dim()), anchor_usage_entropy(out.assignment),
              std::log(4.0));
  std::printf("quantization error: anchors %.4f, k-means %.4f\n",
              quantization_error(data.tokens.values(), out.anchors.values),
              km.inertia / static_cast<double>(data.tokens.tokens()));
  return 0;
}
