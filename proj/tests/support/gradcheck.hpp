#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "decaps/rng.hpp"
#include "decaps/tensor.hpp"

namespace decaps::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::string worst;  // "<leaf index>[<element>]"
  std::size_t checked = 0;
};

/// Compares backward() against central differences for every leaf.
/// The error of a leaf is max|analytic - numeric| / max(max|analytic|,
/// max|numeric|, 1e-8); the result reports the largest over the leaves.
/// `max_elements` > 0 samples that many entries per leaf (with `rng`).
inline GradCheck grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> leaves,
                            double step = 1e-5, std::size_t max_elements = 0, Rng* rng = nullptr) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  backward(f(leaves));
  GradCheck out;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<std::size_t> idx(leaf.numel());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    if (max_elements > 0 && rng && idx.size() > max_elements) {
      for (std::size_t k = 0; k < max_elements; ++k) {
        std::swap(idx[k], idx[k + static_cast<std::size_t>(rng->below(idx.size() - k))]);
      }
      idx.resize(max_elements);
    }
    double max_diff = 0.0, scale = 1e-8;
    std::size_t worst = 0;
    for (std::size_t k : idx) {
      auto v = leaf.mutable_values();
      const double orig = v[k];
      double plus, minus;
      {
        NoGradGuard guard;
        v[k] = orig + step;
        plus = f(leaves).item();
        v[k] = orig - step;
        minus = f(leaves).item();
        v[k] = orig;
      }
      const double numeric = (plus - minus) / (2.0 * step);
      const double diff = std::abs(numeric - analytic[k]);
      if (diff > max_diff) {
        max_diff = diff;
        worst = k;
      }
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[k])});
      ++out.checked;
    }
    const double rel = max_diff / scale;
    if (rel >= out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst = std::to_string(li) + "[" + std::to_string(worst) + "]";
    }
  }
  return out;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

/// Values bounded away from zero (for ops with a kink at zero).
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double gap = 0.1) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(gap, 1.0);
  return Tensor::from(std::move(shape), std::move(v));
}

inline Shape random_shape(Rng& rng, std::size_t rank, std::size_t max_extent = 4) {
  Shape s(rank);
  for (auto& e : s) e = 1 + static_cast<std::size_t>(rng.below(max_extent));
  return s;
}

}  // namespace decaps::testing
