#include "decaps/spread_loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "decaps/ops.hpp"

namespace decaps {

double MarginSchedule::at(std::size_t epoch) const {
  const std::size_t steps = period == 0 ? 0 : epoch / period;
  const double m = std::min(initial + step * static_cast<double>(steps), cap);
  return std::round(m * 1e12) / 1e12;
}

Tensor spread_loss(const Tensor& activations, std::span<const std::size_t> targets, double margin) {
  Tensor a = activations;
  if (a.dim() == 1) a = reshape(a, {1, a.size(0)});
  if (a.dim() != 2) throw ShapeError("spread_loss expects [N, classes], got " + to_string(a.shape()));
  const std::size_t N = a.size(0), C = a.size(1);
  if (targets.size() != N) {
    throw ShapeError("spread_loss got " + std::to_string(targets.size()) + " targets for batch " +
                     std::to_string(N));
  }
  std::vector<double> onehot(N * C, 0.0), others(N * C, 1.0);
  for (std::size_t n = 0; n < N; ++n) {
    if (targets[n] >= C) {
      throw std::out_of_range("target class " + std::to_string(targets[n]) + " out of range for " +
                              std::to_string(C) + " classes");
    }
    onehot[n * C + targets[n]] = 1.0;
    others[n * C + targets[n]] = 0.0;
  }
  const Tensor target_mask = Tensor::from({N, C}, std::move(onehot));
  const Tensor other_mask = Tensor::from({N, C}, std::move(others));

  Tensor a_target = sum(mul(a, target_mask), {1}, true);        // [N, 1]
  Tensor gap = add_scalar(sub(a, a_target), margin);            // m - (a_t - a_j)
  Tensor hinge = mul(relu(gap), other_mask);
  return mean_all(sum(square(hinge), {1}));
}

}  // namespace decaps
