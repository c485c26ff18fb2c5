#pragma once

#include <cstddef>
#include <vector>

#include "decaps/tensor.hpp"

namespace decaps {

struct RoutingOptions {
  std::size_t iterations = 3;
  /// Treat routing coefficients as constants when differentiating; only the
  /// final weighted sum and squash carry gradient.
  bool stop_gradient = true;
  /// Record the coefficients of every iteration in RoutingResult::trace.
  bool keep_trace = false;
};

/// Routing of votes laid out [..., heads I, parents J, H, W, d].
struct RoutingResult {
  /// Dense routing: [..., J, d]. Local routing: [..., J, H, W, d].
  Tensor poses;
  /// Head activation maps: length over d of the final R (.) V, [..., I, J, H, W].
  Tensor ham;
  /// Final routing coefficients R, [..., I, J, H, W].
  Tensor coefficients;
  std::vector<Tensor> trace;
};

/// Inverted dynamic routing: for every (head i, parent j) the coefficients
/// are a softmax over the head's grid locations, so child capsules compete
/// for a parent. Parent pose j = squash(sum_i sum_xy R (.) V); the agreement
/// P_j . V is added to the logits after each iteration.
RoutingResult inverted_dynamic_routing(const Tensor& votes, const RoutingOptions& options);

/// Location-preserving variant used between convolutional capsule layers:
/// the same spatial softmax, but parent poses keep the grid,
///   P_j(x, y) = squash(H * W * sum_i R_ij(x, y) V_ij(x, y)),
/// and agreement is taken against the parent pose at the same location.
RoutingResult inverted_dynamic_routing_local(const Tensor& votes, const RoutingOptions& options);

/// Bottom-up routing-by-agreement: each child distributes itself over the
/// parents with a softmax along J. `ham` holds the same weighted-vote
/// lengths so activation-guided training can still run in ablations.
RoutingResult dynamic_routing_baseline(const Tensor& votes, const RoutingOptions& options);
RoutingResult dynamic_routing_baseline_local(const Tensor& votes, const RoutingOptions& options);

/// sqrt(sum_d (R (.) V)^2): R [..., I, J, H, W], V [..., I, J, H, W, d].
Tensor head_activation_map(const Tensor& coefficients, const Tensor& votes);

/// Mean over the head axis of the maps for parent `parent`:
/// [I, J, H, W] -> [H, W] or [N, I, J, H, W] -> [N, H, W].
Tensor average_ham(const Tensor& ham, std::size_t parent);

}  // namespace decaps
