#pragma once

#include <cstddef>
#include <vector>

#include "decaps/tensor.hpp"

namespace decaps {

using Axes = std::vector<int>;

/// Broadcast result shape of two operand shapes (numpy rules).
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Elementwise with broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Rejects results that are not finite (e.g. division by zero).
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }

Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);

/// Matrix product over the trailing two axes; leading axes broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// x: [N, Cin, H, W], weight: [Cout, Cin, kh, kw], bias: optional [Cout].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias = {},
              Conv2dOptions options = {});

/// Softmax over the joint set of `axes` (each group of elements sharing the
/// remaining indices sums to one).
Tensor softmax(const Tensor& x, const Axes& axes);

Tensor sum(const Tensor& x, const Axes& axes, bool keepdim = false);
Tensor mean(const Tensor& x, const Axes& axes, bool keepdim = false);
/// Sum of every element, shape [1].
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

/// Euclidean (Frobenius) norm over `axes`. The gradient at a zero group is zero.
Tensor norm(const Tensor& x, const Axes& axes, bool keepdim = false);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor reshape(const Tensor& x, Shape shape);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);

/// Bilinear resize of the trailing two axes with half-pixel centres:
/// source = (i + 0.5) * (in / out) - 0.5, clamped to the valid range.
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

/// Running statistics owned by a batch-norm layer.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// x: [N, C, ...]; gamma, beta: [C]. In training mode normalizes by batch
/// statistics over every axis but C and updates `state`; otherwise uses the
/// running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

}  // namespace decaps
