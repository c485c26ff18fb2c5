#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace decaps {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Row-major strides for `shape`.
std::vector<std::size_t> strides_of(const Shape& shape);

/// Resolves a possibly negative axis against `rank`; throws ShapeError when out of range.
std::size_t normalize_axis(int axis, std::size_t rank);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  std::span<double> grad_buffer();
};

}  // namespace detail

/// Dense row-major float64 array that records the operations applied to it
/// so that gradients can be propagated back with `backward`.
///
/// Tensors are cheap handles: copying a Tensor shares the underlying storage
/// and graph node.
class Tensor {
 public:
  using BackwardFn = std::function<void(detail::Node&)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Creates the result of a differentiable op. When gradient recording is
  /// off, or none of `parents` requires a gradient, the result is a plain
  /// constant and `backward` is dropped. Non-finite values are rejected with
  /// the op name.
  static Tensor from_op(std::string_view op, Shape shape, std::vector<double> values,
                        std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t size(int axis) const;

  std::span<const double> values() const;
  /// Direct write access; only valid on tensors that are not part of a recorded graph.
  std::span<double> mutable_values();
  const std::vector<double>& vector() const;

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const double> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// A constant copy that shares no graph history.
  Tensor detach() const;

  const std::string& op_name() const;

  detail::Node& node() const;
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Back-propagates from a scalar `loss`. Gradients of requires-grad leaves
/// accumulate across calls until `zero_grad`.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace decaps
