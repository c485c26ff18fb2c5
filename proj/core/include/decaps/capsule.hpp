#pragma once

#include <cstddef>

#include "decaps/rng.hpp"
#include "decaps/tensor.hpp"

namespace decaps {

/// Capsule poses of one layer, laid out [batch, heads, height, width, dim]
/// with each pose a square matrix flattened row-major into `dim` entries.
struct PoseField {
  Tensor poses;

  std::size_t batch() const { return poses.size(0); }
  std::size_t heads() const { return poses.size(1); }
  std::size_t height() const { return poses.size(2); }
  std::size_t width() const { return poses.size(3); }
  std::size_t dim() const { return poses.size(4); }

  /// Throws ShapeError unless the layout above holds and dim is a perfect square.
  void validate() const;
};

/// One transformation matrix per (head, parent) pair, shared by every grid
/// location of the head: [heads, parents, dim_in, dim_out].
struct TransformBank {
  Tensor weights;

  std::size_t heads() const { return weights.size(0); }
  std::size_t parents() const { return weights.size(1); }
  std::size_t dim_in() const { return weights.size(2); }
  std::size_t dim_out() const { return weights.size(3); }

  /// Zero-mean uniform initialization with bound sqrt(6 / (dim_in + dim_out)).
  static TransformBank init(std::size_t heads, std::size_t parents, std::size_t dim_in,
                            std::size_t dim_out, Rng& rng);
};

/// Votes [batch, heads, parents, height, width, dim].
struct VoteField {
  Tensor votes;

  std::size_t batch() const { return votes.size(0); }
  std::size_t heads() const { return votes.size(1); }
  std::size_t parents() const { return votes.size(2); }
  std::size_t height() const { return votes.size(3); }
  std::size_t width() const { return votes.size(4); }
  std::size_t dim() const { return votes.size(5); }
};

inline constexpr double kSquashEpsilon = 1e-12;

/// squash(s) = |s|^2 / (1 + |s|^2) * s / (|s| + eps) over the last axis.
Tensor squash(const Tensor& s);

/// Frobenius norm of the squashed pose: [batch, heads, h, w] in [0, 1).
Tensor pose_activation(const PoseField& field);

/// Learned 1x1 projection from a feature map to B capsule heads of dim-d poses.
class PrimaryCapsules {
 public:
  PrimaryCapsules(std::size_t in_channels, std::size_t heads, std::size_t dim, Rng& rng);
  /// Adopts an existing projection weight [heads * dim, in_channels, 1, 1].
  PrimaryCapsules(Tensor weight, std::size_t heads, std::size_t dim);

  /// features [N, A, h, w] -> unsquashed poses [N, heads, h, w, dim].
  PoseField operator()(const Tensor& features) const;

  const Tensor& weight() const { return weight_; }
  Tensor& weight() { return weight_; }
  std::size_t heads() const { return heads_; }
  std::size_t dim() const { return dim_; }

 private:
  Tensor weight_;
  std::size_t heads_;
  std::size_t dim_;
};

/// Per-head K x K spatial mixing of child poses (valid windows, stride s):
/// poses [N, B, h, w, d], kernel [B, K, K] -> [N, B, h', w', d].
Tensor window_mix(const Tensor& poses, const Tensor& kernel, std::size_t stride);

/// Output extent of a valid window of size `kernel` and `stride` over `extent`.
std::size_t capsule_grid_extent(std::size_t extent, std::size_t kernel, std::size_t stride);

/// Convolutional capsule votes: window-mixed child poses transformed by the
/// head-shared matrices. kernel: [B, K, K]; transforms: [B, parents, d, d'].
VoteField conv_capsule_votes(const PoseField& field, const Tensor& kernel,
                             const TransformBank& transforms, std::size_t stride);

/// Dense votes from every location of every head: V = P . W with W shared
/// across the grid of a head.
VoteField capsule_votes(const PoseField& field, const TransformBank& transforms);

/// Adds x / h and y / w to the last two vote entries at grid location (x, y).
VoteField add_coordinates(const VoteField& votes);

}  // namespace decaps
