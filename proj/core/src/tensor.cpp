#include "decaps/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace decaps {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  const long a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::span<double> detail::Node::grad_buffer() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

namespace {

void check_shape(const Shape& shape, std::size_t count) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
  }
  if (numel(shape) != count) {
    throw ShapeError("shape " + to_string(shape) + " does not match " + std::to_string(count) +
                     " values");
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = decaps::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape, values.size());
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::from_op(std::string_view op, Shape shape, std::vector<double> values,
                       std::vector<Tensor> parents, BackwardFn backward) {
  check_shape(shape, values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string(op) + ": non-finite output at flat index " +
                         std::to_string(i) + " (shape " + to_string(shape) + ")");
    }
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = std::string(op);
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (g_grad_enabled && any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

detail::Node& Tensor::node() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }
std::size_t Tensor::numel() const { return node().value.size(); }
std::size_t Tensor::size(int axis) const { return shape()[normalize_axis(axis, dim())]; }
std::span<const double> Tensor::values() const { return node().value; }
const std::vector<double>& Tensor::vector() const { return node().value; }

std::span<double> Tensor::mutable_values() {
  auto& n = node();
  if (!n.is_leaf()) throw std::logic_error("mutable_values on a non-leaf tensor (" + n.op + ")");
  return n.value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node().value[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for shape " + to_string(s));
  const auto st = strides_of(s);
  std::size_t flat = 0, k = 0;
  for (auto i : index) {
    if (i >= s[k]) throw ShapeError("index out of range for shape " + to_string(s));
    flat += i * st[k++];
  }
  return node().value[flat];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& n = node();
  if (!n.is_leaf()) throw std::logic_error("set_requires_grad on a non-leaf tensor");
  n.requires_grad = flag;
}

bool Tensor::has_grad() const { return node().grad.size() == node().value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return node().grad;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return zeros(shape());
  return from(shape(), node().grad);
}

void Tensor::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node().value); }

const std::string& Tensor::op_name() const { return node().op; }

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  auto& root = loss.node();
  if (!root.requires_grad) return;

  // Iterative post-order DFS for a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  root.grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf()) continue;
    n->backward(*n);
    std::vector<double>().swap(n->grad);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace decaps
