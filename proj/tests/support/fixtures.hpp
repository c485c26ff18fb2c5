#pragma once

#include <cstdint>
#include <vector>

#include "decaps/model.hpp"
#include "decaps/spread_loss.hpp"
#include "support/gradcheck.hpp"

namespace decaps::testing {

/// 24 px input, 2x2 primary grid, capsule kernel 1, differentiable routing.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.input_size = 24;
  c.stem_channels = 2;
  c.backbone_out_channels = 8;
  c.projection_channels = 4;
  c.primary_heads = c.conv1_heads = c.conv2_heads = 2;
  c.pose_dim = 4;
  c.kernel = 1;
  c.routing_stop_gradient = false;
  c.seed = 3;
  return c;
}

inline Tensor fixture_images(std::size_t n, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * size * size);
  for (double& x : v) x = rng.uniform();
  return Tensor::from({n, 1, size, size}, std::move(v));
}

/// Spread loss of the tiny model on a fixed batch, checked against central
/// differences on `samples` entries of every parameter.
inline GradCheck end_to_end_grad_check(std::uint64_t instance, std::size_t samples, Rng& rng) {
  ModelConfig cfg = tiny_config();
  cfg.seed = 100 + instance;
  DecapsModel m(cfg);
  const Tensor x = fixture_images(2, 24, 30 + instance);
  const std::size_t labels[] = {0, 1};
  std::vector<Tensor> leaves;
  for (auto& [name, t] : m.parameters()) leaves.push_back(t);
  auto f = [&](const std::vector<Tensor>&) {
    return spread_loss(m.forward(x, Mode::train).activations, labels, 0.9);
  };
  return grad_check(f, leaves, 1e-5, samples, &rng);
}

}  // namespace decaps::testing
