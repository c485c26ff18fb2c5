#pragma once

#include <cstddef>
#include <span>

#include "decaps/tensor.hpp"

namespace decaps {

/// Margin that starts at `initial` and grows by `step` every `period` epochs
/// up to `cap`.
struct MarginSchedule {
  double initial = 0.2;
  double step = 0.1;
  std::size_t period = 2;
  double cap = 0.9;

  /// min(initial + step * floor(epoch / period), cap), rounded to 1e-12 so
  /// that e.g. epoch 2 yields exactly 0.3.
  double at(std::size_t epoch) const;
};

inline double margin_at(std::size_t epoch, const MarginSchedule& schedule = {}) {
  return schedule.at(epoch);
}

/// Spread loss averaged over the batch:
///   L = mean_n sum_{j != t_n} max(0, m - (a_{n,t} - a_{n,j}))^2
/// activations: [N, classes] (or [classes] with a single target).
Tensor spread_loss(const Tensor& activations, std::span<const std::size_t> targets, double margin);

}  // namespace decaps
