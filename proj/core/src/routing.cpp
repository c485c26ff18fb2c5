#include "decaps/routing.hpp"

#include <optional>
#include <string>

#include "decaps/capsule.hpp"
#include "decaps/ops.hpp"

namespace decaps {

namespace {

enum class Competition { locations, parents };
enum class Aggregation { dense, local };

Shape without_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

Shape with_trailing_one(const Shape& s) {
  Shape out = s;
  out.push_back(1);
  return out;
}

Tensor route_once_sum(const Tensor& weighted, Aggregation agg, bool rescale) {
  if (agg == Aggregation::dense) return sum(weighted, {-5, -3, -2});
  Tensor s = sum(weighted, {-5});
  if (rescale) s = scale(s, static_cast<double>(weighted.size(-3) * weighted.size(-2)));
  return s;
}

// Parent poses reshaped to broadcast against the votes.
Tensor broadcastable_poses(const Tensor& poses, const Tensor& votes, Aggregation agg) {
  const Shape& vs = votes.shape();
  Shape target(vs.begin(), vs.end() - 5);
  target.push_back(1);
  target.push_back(vs[vs.size() - 4]);
  if (agg == Aggregation::dense) {
    target.push_back(1);
    target.push_back(1);
  } else {
    target.push_back(vs[vs.size() - 3]);
    target.push_back(vs[vs.size() - 2]);
  }
  target.push_back(vs.back());
  return reshape(poses, target);
}

RoutingResult route(const Tensor& votes, const RoutingOptions& options, Competition comp,
                    Aggregation agg) {
  if (options.iterations < 1) throw std::invalid_argument("routing needs at least one iteration");
  if (votes.dim() < 5) {
    throw ShapeError("routing expects votes [..., I, J, H, W, d], got " + to_string(votes.shape()));
  }
  const Axes softmax_axes = comp == Competition::locations ? Axes{-2, -1} : Axes{-3};
  const bool rescale = comp == Competition::locations;

  RoutingResult result;
  Tensor logits = Tensor::zeros(without_last(votes.shape()));
  Tensor coeffs;
  const std::size_t n = options.iterations;
  for (std::size_t it = 0; it < n; ++it) {
    const bool last = it + 1 == n;
    std::optional<NoGradGuard> guard;
    if (options.stop_gradient) guard.emplace();
    coeffs = softmax(logits, softmax_axes);
    if (options.keep_trace) result.trace.push_back(coeffs.detach());
    if (last) break;
    Tensor weighted = mul(reshape(coeffs, with_trailing_one(coeffs.shape())), votes);
    Tensor poses = squash(route_once_sum(weighted, agg, rescale));
    logits = add(logits, sum(mul(broadcastable_poses(poses, votes, agg), votes), {-1}));
  }
  // Final iteration: gradient flows through the weighted sum and squash only
  // when stop_gradient is set (coeffs is then a constant).
  Tensor weighted = mul(reshape(coeffs, with_trailing_one(coeffs.shape())), votes);
  result.poses = squash(route_once_sum(weighted, agg, rescale));
  {
    NoGradGuard guard;
    result.ham = norm(weighted, {-1});
  }
  result.coefficients = coeffs.detach();
  return result;
}

}  // namespace

RoutingResult inverted_dynamic_routing(const Tensor& votes, const RoutingOptions& options) {
  return route(votes, options, Competition::locations, Aggregation::dense);
}

RoutingResult inverted_dynamic_routing_local(const Tensor& votes, const RoutingOptions& options) {
  return route(votes, options, Competition::locations, Aggregation::local);
}

RoutingResult dynamic_routing_baseline(const Tensor& votes, const RoutingOptions& options) {
  return route(votes, options, Competition::parents, Aggregation::dense);
}

RoutingResult dynamic_routing_baseline_local(const Tensor& votes, const RoutingOptions& options) {
  return route(votes, options, Competition::parents, Aggregation::local);
}

Tensor head_activation_map(const Tensor& coefficients, const Tensor& votes) {
  if (without_last(votes.shape()) != coefficients.shape()) {
    throw ShapeError("coefficients " + to_string(coefficients.shape()) + " do not match votes " +
                     to_string(votes.shape()));
  }
  return norm(mul(reshape(coefficients, with_trailing_one(coefficients.shape())), votes), {-1});
}

Tensor average_ham(const Tensor& ham, std::size_t parent) {
  if (ham.dim() != 4 && ham.dim() != 5) {
    throw ShapeError("average_ham expects [I, J, H, W] or [N, I, J, H, W], got " +
                     to_string(ham.shape()));
  }
  if (parent >= ham.size(-3)) {
    throw std::out_of_range("class index " + std::to_string(parent) + " out of range for " +
                            std::to_string(ham.size(-3)) + " parents");
  }
  Tensor picked = slice(ham, -3, parent, 1);
  Tensor m = mean(picked, {-4, -3});
  return m;
}

}  // namespace decaps
