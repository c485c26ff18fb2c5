#include "decaps/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace decaps {

std::string to_string(RoutingMethod method) {
  return method == RoutingMethod::inverted ? "idr" : "baseline";
}

RoutingMethod parse_routing_method(const std::string& text) {
  if (text == "idr" || text == "inverted") return RoutingMethod::inverted;
  if (text == "baseline" || text == "dynamic") return RoutingMethod::baseline;
  throw std::invalid_argument("unknown routing method '" + text + "' (expected idr or baseline)");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.input_size = 96;
  c.stem_channels = 8;
  c.backbone_out_channels = 64;
  c.projection_channels = 64;
  c.primary_heads = c.conv1_heads = c.conv2_heads = 8;
  c.classes = 2;
  c.desk_scale = true;
  return c;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  std::size_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw std::invalid_argument("config key '" + key + "': expected an unsigned integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v)) {
    throw std::invalid_argument("config key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw std::invalid_argument("config key '" + key + "': expected true/false, got '" + text + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>> ModelConfig::to_key_values() const {
  auto s = [](std::size_t v) { return std::to_string(v); };
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"input_size", s(input_size)},
      {"stem_channels", s(stem_channels)},
      {"backbone_blocks", s(backbone_blocks)},
      {"backbone_out_channels", s(backbone_out_channels)},
      {"projection_channels", s(projection_channels)},
      {"primary_heads", s(primary_heads)},
      {"conv1_heads", s(conv1_heads)},
      {"conv2_heads", s(conv2_heads)},
      {"pose_dim", s(pose_dim)},
      {"kernel", s(kernel)},
      {"stride", s(stride)},
      {"routing_iters", s(routing_iters)},
      {"classes", s(classes)},
      {"routing", decaps::to_string(routing)},
      {"routing_stop_gradient", b(routing_stop_gradient)},
      {"coordinate_addition", b(coordinate_addition)},
      {"theta_crop", format_double(theta_crop)},
      {"theta_drop", format_double(theta_drop)},
      {"margin_initial", format_double(margin.initial)},
      {"margin_step", format_double(margin.step)},
      {"margin_period", s(margin.period)},
      {"margin_cap", format_double(margin.cap)},
      {"weight_coarse", format_double(weight_coarse)},
      {"weight_crop", format_double(weight_crop)},
      {"weight_drop", format_double(weight_drop)},
      {"learning_rate", format_double(learning_rate)},
      {"beta1", format_double(beta1)},
      {"beta2", format_double(beta2)},
      {"adam_eps", format_double(adam_eps)},
      {"batch_size", s(batch_size)},
      {"seed", std::to_string(seed)},
      {"desk_scale", b(desk_scale)},
  };
}

bool ModelConfig::set(const std::string& key, const std::string& v) {
  if (key == "input_size") input_size = parse_size(key, v);
  else if (key == "stem_channels") stem_channels = parse_size(key, v);
  else if (key == "backbone_blocks") backbone_blocks = parse_size(key, v);
  else if (key == "backbone_out_channels") backbone_out_channels = parse_size(key, v);
  else if (key == "projection_channels") projection_channels = parse_size(key, v);
  else if (key == "primary_heads") primary_heads = parse_size(key, v);
  else if (key == "conv1_heads") conv1_heads = parse_size(key, v);
  else if (key == "conv2_heads") conv2_heads = parse_size(key, v);
  else if (key == "pose_dim") pose_dim = parse_size(key, v);
  else if (key == "kernel") kernel = parse_size(key, v);
  else if (key == "stride") stride = parse_size(key, v);
  else if (key == "routing_iters") routing_iters = parse_size(key, v);
  else if (key == "classes") classes = parse_size(key, v);
  else if (key == "routing") routing = parse_routing_method(v);
  else if (key == "routing_stop_gradient") routing_stop_gradient = parse_bool(key, v);
  else if (key == "coordinate_addition") coordinate_addition = parse_bool(key, v);
  else if (key == "theta_crop") theta_crop = parse_double(key, v);
  else if (key == "theta_drop") theta_drop = parse_double(key, v);
  else if (key == "margin_initial") margin.initial = parse_double(key, v);
  else if (key == "margin_step") margin.step = parse_double(key, v);
  else if (key == "margin_period") margin.period = parse_size(key, v);
  else if (key == "margin_cap") margin.cap = parse_double(key, v);
  else if (key == "weight_coarse") weight_coarse = parse_double(key, v);
  else if (key == "weight_crop") weight_crop = parse_double(key, v);
  else if (key == "weight_drop") weight_drop = parse_double(key, v);
  else if (key == "learning_rate") learning_rate = parse_double(key, v);
  else if (key == "beta1") beta1 = parse_double(key, v);
  else if (key == "beta2") beta2 = parse_double(key, v);
  else if (key == "adam_eps") adam_eps = parse_double(key, v);
  else if (key == "batch_size") batch_size = parse_size(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "desk_scale") desk_scale = parse_bool(key, v);
  else return false;
  return true;
}

bool ModelConfig::same_architecture(const ModelConfig& o) const {
  return input_size == o.input_size && stem_channels == o.stem_channels &&
         backbone_blocks == o.backbone_blocks && backbone_out_channels == o.backbone_out_channels &&
         projection_channels == o.projection_channels && primary_heads == o.primary_heads &&
         conv1_heads == o.conv1_heads && conv2_heads == o.conv2_heads && pose_dim == o.pose_dim &&
         kernel == o.kernel && stride == o.stride && routing_iters == o.routing_iters &&
         classes == o.classes && routing == o.routing &&
         routing_stop_gradient == o.routing_stop_gradient &&
         coordinate_addition == o.coordinate_addition;
}

std::string ShapeChain::describe() const {
  std::ostringstream os;
  os << "input " << input;
  for (std::size_t i = 0; i < backbone.size(); ++i) os << (i == 0 ? " -> stem " : " -> stage ") << backbone[i];
  if (primary) os << " -> primary " << primary;
  if (conv1) os << " -> conv caps " << conv1;
  if (conv2) os << " -> conv caps " << conv2;
  if (!ham.empty()) os << " -> ham " << to_string(ham);
  return os.str();
}

ShapeChain shape_chain(const ModelConfig& c) {
  ShapeChain chain;
  chain.input = c.input_size;
  auto fail = [&](const std::string& why) {
    throw ShapeError("inconsistent model shape (" + why + "): " + chain.describe());
  };
  if (c.input_size == 0) fail("input size is zero");
  if (c.backbone_blocks == 0) fail("no residual blocks");
  if (c.classes < 2) fail("need at least two classes");
  if (c.routing_iters < 1) fail("routing needs at least one iteration");
  if (c.pose_dim < 2) fail("pose dim must be at least 2");
  {
    const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(c.pose_dim))));
    if (r * r != c.pose_dim) fail("pose dim " + std::to_string(c.pose_dim) + " is not a perfect square");
  }
  if (c.backbone_out_channels % (std::size_t{1} << (c.backbone_blocks - 1)) != 0) {
    fail("backbone_out_channels not divisible across stages");
  }
  if (c.kernel == 0 || c.stride == 0) fail("capsule kernel and stride must be positive");
  std::size_t e = c.input_size;
  // 3x3 convolutions with padding 1 and stride 2: ceil(e / 2).
  for (std::size_t i = 0; i <= c.backbone_blocks; ++i) {
    e = (e + 1) / 2;
    chain.backbone.push_back(e);
  }
  chain.primary = e;
  if (chain.primary < c.kernel) fail("primary grid smaller than capsule kernel");
  chain.conv1 = (chain.primary - c.kernel) / c.stride + 1;
  if (chain.conv1 < c.kernel) fail("first capsule grid smaller than capsule kernel");
  chain.conv2 = (chain.conv1 - c.kernel) / c.stride + 1;
  chain.ham = {c.conv2_heads, c.classes, chain.conv2, chain.conv2};
  return chain;
}

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> w(numel(shape));
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(w), true);
}

ConvBn make_conv_bn(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                    std::size_t padding, Rng& rng) {
  ConvBn layer;
  layer.weight = he_uniform({out, in, k, k}, in * k * k, rng);
  layer.gamma = Tensor::full({out}, 1.0, true);
  layer.beta = Tensor::zeros({out}, true);
  layer.bn = BatchNormState(out);
  layer.options = {stride, padding};
  return layer;
}

std::vector<ResidualBlock> make_blocks(const ModelConfig& c, Rng& rng) {
  std::vector<ResidualBlock> blocks;
  std::size_t in = c.stem_channels;
  for (std::size_t i = 0; i < c.backbone_blocks; ++i) {
    const std::size_t out = c.backbone_out_channels >> (c.backbone_blocks - 1 - i);
    ResidualBlock b;
    b.conv1 = make_conv_bn(in, out, 3, 2, 1, rng);
    b.conv2 = make_conv_bn(out, out, 3, 1, 1, rng);
    b.shortcut = make_conv_bn(in, out, 1, 2, 0, rng);
    blocks.push_back(std::move(b));
    in = out;
  }
  return blocks;
}

Tensor window_kernel(std::size_t heads, std::size_t k, Rng& rng) {
  const double bound = std::sqrt(3.0) / static_cast<double>(k);
  std::vector<double> w(heads * k * k);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return Tensor::from({heads, k, k}, std::move(w), true);
}

template <class F>
auto in_layer(const std::string& layer, F&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError("layer " + layer + ": " + e.what());
  }
}

}  // namespace

Tensor ConvBn::operator()(const Tensor& x, bool training) {
  return batch_norm(conv2d(x, weight, {}, options), gamma, beta, bn, training);
}

Tensor ResidualBlock::operator()(const Tensor& x, bool training) {
  Tensor main = relu(conv1(x, training));
  main = conv2(main, training);
  return relu(add(main, shortcut(x, training)));
}

DecapsModel::DecapsModel(const ModelConfig& config) : DecapsModel(config, Rng(config.seed)) {}

// Members are initialized in declaration order, all drawing from `rng`.
DecapsModel::DecapsModel(const ModelConfig& config, Rng&& rng)
    : config_(config),
      chain_(shape_chain(config_)),
      stem_(make_conv_bn(1, config_.stem_channels, 3, 2, 1, rng)),
      blocks_(make_blocks(config_, rng)),
      projection_weight_(he_uniform({config_.projection_channels, config_.backbone_out_channels, 1, 1},
                                    config_.backbone_out_channels, rng)),
      projection_bias_(Tensor::zeros({config_.projection_channels}, true)),
      primary_(config_.projection_channels, config_.primary_heads, config_.pose_dim, rng),
      conv1_kernel_(window_kernel(config_.primary_heads, config_.kernel, rng)),
      conv1_transforms_(TransformBank::init(config_.primary_heads, config_.conv1_heads,
                                            config_.pose_dim, config_.pose_dim, rng)),
      conv2_kernel_(window_kernel(config_.conv1_heads, config_.kernel, rng)),
      conv2_transforms_(TransformBank::init(config_.conv1_heads, config_.conv2_heads,
                                            config_.pose_dim, config_.pose_dim, rng)),
      class_transforms_(TransformBank::init(config_.conv2_heads, config_.classes, config_.pose_dim,
                                            config_.pose_dim, rng)) {}

ModelOutput DecapsModel::forward(const Tensor& images, Mode mode) {
  const std::size_t S = config_.input_size;
  if (images.dim() != 4 || images.size(1) != 1 || images.size(2) != S || images.size(3) != S) {
    throw ShapeError("model expects images [N, 1, " + std::to_string(S) + ", " + std::to_string(S) +
                     "], got " + to_string(images.shape()));
  }
  ++forward_passes_;
  const bool training = mode == Mode::train;

  Tensor x = in_layer("stem", [&] { return relu(stem_(images, training)); });
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = in_layer("residual_block_" + std::to_string(i + 1), [&] { return blocks_[i](x, training); });
  }
  x = in_layer("projection", [&] { return relu(conv2d(x, projection_weight_, projection_bias_)); });
  PoseField p0 = in_layer("primary_capsules", [&] { return PoseField{squash(primary_(x).poses)}; });

  const RoutingOptions ro{config_.routing_iters, config_.routing_stop_gradient, false};
  const bool inverted = config_.routing == RoutingMethod::inverted;
  auto route_local = [&](const Tensor& v) {
    return inverted ? inverted_dynamic_routing_local(v, ro) : dynamic_routing_baseline_local(v, ro);
  };
  PoseField p1 = in_layer("conv_capsules_1", [&] {
    VoteField v = conv_capsule_votes(p0, conv1_kernel_, conv1_transforms_, config_.stride);
    return PoseField{route_local(v.votes).poses};
  });
  PoseField p2 = in_layer("conv_capsules_2", [&] {
    VoteField v = conv_capsule_votes(p1, conv2_kernel_, conv2_transforms_, config_.stride);
    return PoseField{route_local(v.votes).poses};
  });
  return in_layer("class_capsules", [&] {
    VoteField v = capsule_votes(p2, class_transforms_);
    if (config_.coordinate_addition) v = add_coordinates(v);
    RoutingResult r = inverted ? inverted_dynamic_routing(v.votes, ro) : dynamic_routing_baseline(v.votes, ro);
    ModelOutput out;
    out.activations = norm(r.poses, {-1});
    out.poses = r.poses;
    out.ham = r.ham;
    return out;
  });
}

std::vector<std::pair<std::string, Tensor>> DecapsModel::parameters() {
  std::vector<std::pair<std::string, Tensor>> p;
  auto conv_bn = [&](const std::string& prefix, ConvBn& l) {
    p.emplace_back(prefix + ".weight", l.weight);
    p.emplace_back(prefix + ".gamma", l.gamma);
    p.emplace_back(prefix + ".beta", l.beta);
  };
  conv_bn("stem", stem_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string b = "block" + std::to_string(i + 1);
    conv_bn(b + ".conv1", blocks_[i].conv1);
    conv_bn(b + ".conv2", blocks_[i].conv2);
    conv_bn(b + ".shortcut", blocks_[i].shortcut);
  }
  p.emplace_back("projection.weight", projection_weight_);
  p.emplace_back("projection.bias", projection_bias_);
  p.emplace_back("primary.weight", primary_.weight());
  p.emplace_back("conv_caps1.kernel", conv1_kernel_);
  p.emplace_back("conv_caps1.transforms", conv1_transforms_.weights);
  p.emplace_back("conv_caps2.kernel", conv2_kernel_);
  p.emplace_back("conv_caps2.transforms", conv2_transforms_.weights);
  p.emplace_back("class_caps.transforms", class_transforms_.weights);
  return p;
}

std::vector<StateEntry> DecapsModel::state() {
  std::vector<StateEntry> s;
  for (auto& [name, t] : parameters()) s.push_back({name, t.shape(), t.mutable_values()});
  auto buffers = [&](const std::string& prefix, ConvBn& l) {
    const Shape shape{l.bn.running_mean.size()};
    s.push_back({prefix + ".running_mean", shape, l.bn.running_mean});
    s.push_back({prefix + ".running_var", shape, l.bn.running_var});
  };
  buffers("stem", stem_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string b = "block" + std::to_string(i + 1);
    buffers(b + ".conv1", blocks_[i].conv1);
    buffers(b + ".conv2", blocks_[i].conv2);
    buffers(b + ".shortcut", blocks_[i].shortcut);
  }
  return s;
}

std::size_t DecapsModel::parameter_count() {
  std::size_t n = 0;
  for (auto& [name, t] : parameters()) n += t.numel();
  return n;
}

void DecapsModel::zero_weights() {
  for (auto& [name, t] : parameters()) {
    auto v = t.mutable_values();
    std::fill(v.begin(), v.end(), 0.0);
  }
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto w = p.mutable_values();
    const auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace decaps
