#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "decaps/capsule.hpp"
#include "decaps/ops.hpp"
#include "decaps/rng.hpp"
#include "decaps/routing.hpp"
#include "decaps/spread_loss.hpp"
#include "decaps/tensor.hpp"

namespace decaps {

enum class RoutingMethod { inverted, baseline };

std::string to_string(RoutingMethod method);
RoutingMethod parse_routing_method(const std::string& text);

/// Architecture and training hyperparameters. Defaults are the full-size
/// network (448 px input, 1024 backbone maps, A = 512, B = C = D = 32 heads of
/// 4x4 poses, 3 routing iterations).
struct ModelConfig {
  std::size_t input_size = 448;
  std::size_t stem_channels = 64;
  std::size_t backbone_blocks = 3;
  std::size_t backbone_out_channels = 1024;
  std::size_t projection_channels = 512;  // A
  std::size_t primary_heads = 32;         // B
  std::size_t conv1_heads = 32;           // C
  std::size_t conv2_heads = 32;           // D
  std::size_t pose_dim = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t routing_iters = 3;
  std::size_t classes = 2;
  RoutingMethod routing = RoutingMethod::inverted;
  bool routing_stop_gradient = true;
  bool coordinate_addition = true;

  double theta_crop = 0.5;
  double theta_drop = 0.3;
  MarginSchedule margin{};
  /// Relative weights of the whole-image, cropped and dropped passes.
  double weight_coarse = 1.0;
  double weight_crop = 1.0;
  double weight_drop = 1.0;

  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  bool desk_scale = false;

  static ModelConfig full_size() { return {}; }
  /// Desk preset: 96 px input, 64 backbone maps, A = 64, B = C = D = 8.
  static ModelConfig desk();

  /// Flat key/value view used by config files and checkpoints.
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  /// Returns false when `key` is not a ModelConfig field.
  bool set(const std::string& key, const std::string& value);
  /// Fields that determine the weight layout and the forward computation.
  bool same_architecture(const ModelConfig& other) const;
};

/// Spatial extents through the network for a configuration.
struct ShapeChain {
  std::size_t input = 0;
  std::vector<std::size_t> backbone;  // after the stem and every stage
  std::size_t primary = 0;
  std::size_t conv1 = 0;
  std::size_t conv2 = 0;
  Shape ham;  // [D, classes, h, w]

  std::string describe() const;
};

/// Throws ShapeError (with the chain computed so far) when inconsistent.
ShapeChain shape_chain(const ModelConfig& config);

enum class Mode { train, eval };

struct ModelOutput {
  Tensor activations;  // [N, classes]
  Tensor poses;        // [N, classes, d] class capsule poses (squashed)
  Tensor ham;          // [N, D, classes, h, w], no gradient
};

/// Convolution + batch norm (no conv bias).
struct ConvBn {
  Tensor weight;
  Tensor gamma;
  Tensor beta;
  BatchNormState bn;
  Conv2dOptions options;

  Tensor operator()(const Tensor& x, bool training);
};

struct ResidualBlock {
  ConvBn conv1;
  ConvBn conv2;
  ConvBn shortcut;  // 1x1 projection, stride 2

  Tensor operator()(const Tensor& x, bool training);
};

/// A parameter or buffer exposed for optimization and serialization.
struct StateEntry {
  std::string name;
  Shape shape;
  std::span<double> data;
};

class DecapsModel {
 public:
  explicit DecapsModel(const ModelConfig& config);

  DecapsModel(const DecapsModel&) = delete;
  DecapsModel& operator=(const DecapsModel&) = delete;
  DecapsModel(DecapsModel&&) = default;
  DecapsModel& operator=(DecapsModel&&) = default;

  /// images: [N, 1, input_size, input_size].
  ModelOutput forward(const Tensor& images, Mode mode);

  const ModelConfig& config() const { return config_; }
  const ShapeChain& chain() const { return chain_; }

  /// Trainable tensors in a fixed order.
  std::vector<std::pair<std::string, Tensor>> parameters();
  /// Parameters followed by batch-norm running statistics.
  std::vector<StateEntry> state();
  std::size_t parameter_count();

  std::size_t forward_passes() const { return forward_passes_; }

  /// Sets every trainable weight to zero (batch-norm scales included).
  void zero_weights();

 private:
  DecapsModel(const ModelConfig& config, Rng&& rng);

  ModelConfig config_;
  ShapeChain chain_;
  ConvBn stem_;
  std::vector<ResidualBlock> blocks_;
  Tensor projection_weight_;
  Tensor projection_bias_;
  PrimaryCapsules primary_;
  Tensor conv1_kernel_;
  TransformBank conv1_transforms_;
  Tensor conv2_kernel_;
  TransformBank conv2_transforms_;
  TransformBank class_transforms_;
  std::size_t forward_passes_ = 0;
};

/// Adaptive moment estimation with bias correction and a fixed learning rate.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps = 1e-8);

  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

}  // namespace decaps
