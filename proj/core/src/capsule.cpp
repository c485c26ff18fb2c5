#include "decaps/capsule.hpp"

#include <cmath>
#include <string>

#include "decaps/ops.hpp"

namespace decaps {

namespace {

bool is_perfect_square(std::size_t n) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  return r * r == n;
}

}  // namespace

void PoseField::validate() const {
  if (!poses.defined() || poses.dim() != 5) {
    throw ShapeError("pose field must be [batch, heads, h, w, dim], got " +
                     (poses.defined() ? to_string(poses.shape()) : std::string("undefined")));
  }
  if (!is_perfect_square(dim())) {
    throw ShapeError("pose dim " + std::to_string(dim()) + " is not a perfect square");
  }
}

TransformBank TransformBank::init(std::size_t heads, std::size_t parents, std::size_t dim_in,
                                  std::size_t dim_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(dim_in + dim_out));
  std::vector<double> w(heads * parents * dim_in * dim_out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return TransformBank{Tensor::from({heads, parents, dim_in, dim_out}, std::move(w), true)};
}

Tensor squash(const Tensor& s) {
  if (s.dim() < 1) throw ShapeError("squash needs at least one axis");
  const std::size_t d = s.size(-1);
  const std::size_t groups = s.numel() / d;
  const auto sv = s.values();
  std::vector<double> out(s.numel());
  for (std::size_t g = 0; g < groups; ++g) {
    const double* x = sv.data() + g * d;
    double n2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) n2 += x[k] * x[k];
    const double n = std::sqrt(n2);
    const double f = n2 / ((1.0 + n2) * (n + kSquashEpsilon));
    for (std::size_t k = 0; k < d; ++k) out[g * d + k] = f * x[k];
  }
  return Tensor::from_op("squash", s.shape(), std::move(out), {s}, [d, groups](detail::Node& self) {
    auto& ps = *self.parents[0];
    auto gs = ps.grad_buffer();
    for (std::size_t g = 0; g < groups; ++g) {
      const double* x = ps.value.data() + g * d;
      const double* go = self.grad.data() + g * d;
      double n2 = 0.0, dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        n2 += x[k] * x[k];
        dot += go[k] * x[k];
      }
      const double n = std::sqrt(n2);
      const double a = 1.0 + n2;
      const double b = n + kSquashEpsilon;
      const double f = n2 / (a * b);
      // d/dn of n^2 / ((1 + n^2)(n + eps))
      const double fp = (2.0 * n * a * b - n2 * (2.0 * n * b + a)) / (a * a * b * b);
      const double radial = n > 0.0 ? fp * dot / n : 0.0;
      for (std::size_t k = 0; k < d; ++k) gs[g * d + k] += f * go[k] + radial * x[k];
    }
  });
}

Tensor pose_activation(const PoseField& field) {
  field.validate();
  return norm(squash(field.poses), {-1});
}

PrimaryCapsules::PrimaryCapsules(std::size_t in_channels, std::size_t heads, std::size_t dim, Rng& rng)
    : heads_(heads), dim_(dim) {
  if (!is_perfect_square(dim)) throw ShapeError("pose dim " + std::to_string(dim) + " is not a perfect square");
  const std::size_t out = heads * dim;
  const double bound = std::sqrt(6.0 / static_cast<double>(in_channels + out));
  std::vector<double> w(out * in_channels);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  weight_ = Tensor::from({out, in_channels, 1, 1}, std::move(w), true);
}

PrimaryCapsules::PrimaryCapsules(Tensor weight, std::size_t heads, std::size_t dim)
    : weight_(std::move(weight)), heads_(heads), dim_(dim) {
  if (!is_perfect_square(dim)) throw ShapeError("pose dim " + std::to_string(dim) + " is not a perfect square");
  const Shape& s = weight_.shape();
  if (s.size() != 4 || s[0] != heads * dim || s[2] != 1 || s[3] != 1) {
    throw ShapeError("primary capsule projection " + to_string(s) + " does not produce " +
                     std::to_string(heads) + " heads x " + std::to_string(dim) + " = " +
                     std::to_string(heads * dim) + " channels");
  }
}

PoseField PrimaryCapsules::operator()(const Tensor& features) const {
  if (features.dim() != 4 || features.size(1) != weight_.size(1)) {
    throw ShapeError("primary capsules expect [N, " + std::to_string(weight_.size(1)) +
                     ", h, w] features, got " + to_string(features.shape()));
  }
  const std::size_t N = features.size(0), h = features.size(2), w = features.size(3);
  Tensor projected = conv2d(features, weight_);
  Tensor grouped = reshape(projected, {N, heads_, dim_, h, w});
  return PoseField{permute(grouped, {0, 1, 3, 4, 2})};
}

std::size_t capsule_grid_extent(std::size_t extent, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0) throw ShapeError("capsule kernel and stride must be positive");
  if (extent < kernel) {
    throw ShapeError("capsule grid extent " + std::to_string(extent) + " smaller than kernel " +
                     std::to_string(kernel));
  }
  return (extent - kernel) / stride + 1;
}

Tensor window_mix(const Tensor& poses, const Tensor& kernel, std::size_t stride) {
  if (poses.dim() != 5 || kernel.dim() != 3 || kernel.size(0) != poses.size(1) ||
      kernel.size(1) != kernel.size(2)) {
    throw ShapeError("window_mix expects poses [N,B,h,w,d] and kernel [B,K,K], got " +
                     to_string(poses.shape()) + " and " + to_string(kernel.shape()));
  }
  const std::size_t N = poses.size(0), B = poses.size(1), H = poses.size(2), W = poses.size(3),
                    D = poses.size(4), K = kernel.size(1);
  const std::size_t Ho = capsule_grid_extent(H, K, stride);
  const std::size_t Wo = capsule_grid_extent(W, K, stride);
  const auto pv = poses.values();
  const auto kv = kernel.values();
  std::vector<double> out(N * B * Ho * Wo * D, 0.0);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t b = 0; b < B; ++b) {
      const double* src = pv.data() + (n * B + b) * H * W * D;
      double* dst = out.data() + (n * B + b) * Ho * Wo * D;
      const double* kb = kv.data() + b * K * K;
      for (std::size_t x = 0; x < Ho; ++x)
        for (std::size_t y = 0; y < Wo; ++y) {
          double* o = dst + (x * Wo + y) * D;
          for (std::size_t u = 0; u < K; ++u)
            for (std::size_t v = 0; v < K; ++v) {
              const double kw = kb[u * K + v];
              const double* p = src + ((x * stride + u) * W + (y * stride + v)) * D;
              for (std::size_t d = 0; d < D; ++d) o[d] += kw * p[d];
            }
        }
    }
  return Tensor::from_op(
      "window_mix", {N, B, Ho, Wo, D}, std::move(out), {poses, kernel},
      [N, B, H, W, D, K, Ho, Wo, stride](detail::Node& self) {
        auto& np = *self.parents[0];
        auto& nk = *self.parents[1];
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t pbase = (n * B + b) * H * W * D;
            const double* g = self.grad.data() + (n * B + b) * Ho * Wo * D;
            for (std::size_t x = 0; x < Ho; ++x)
              for (std::size_t y = 0; y < Wo; ++y) {
                const double* go = g + (x * Wo + y) * D;
                for (std::size_t u = 0; u < K; ++u)
                  for (std::size_t v = 0; v < K; ++v) {
                    const std::size_t off = pbase + ((x * stride + u) * W + (y * stride + v)) * D;
                    if (np.requires_grad) {
                      auto gp = np.grad_buffer();
                      const double kw = nk.value[b * K * K + u * K + v];
                      for (std::size_t d = 0; d < D; ++d) gp[off + d] += kw * go[d];
                    }
                    if (nk.requires_grad) {
                      double acc = 0.0;
                      for (std::size_t d = 0; d < D; ++d) acc += go[d] * np.value[off + d];
                      nk.grad_buffer()[b * K * K + u * K + v] += acc;
                    }
                  }
              }
          }
      });
}

VoteField capsule_votes(const PoseField& field, const TransformBank& transforms) {
  field.validate();
  if (transforms.weights.dim() != 4 || transforms.heads() != field.heads() ||
      transforms.dim_in() != field.dim()) {
    throw ShapeError("transform bank " + to_string(transforms.weights.shape()) +
                     " incompatible with pose field " + to_string(field.poses.shape()));
  }
  const std::size_t N = field.batch(), B = field.heads(), H = field.height(), W = field.width();
  Tensor flat = reshape(field.poses, {N, B, 1, H * W, field.dim()});
  Tensor v = matmul(flat, transforms.weights);  // [N, B, parents, HW, d']
  return VoteField{reshape(v, {N, B, transforms.parents(), H, W, transforms.dim_out()})};
}

VoteField conv_capsule_votes(const PoseField& field, const Tensor& kernel,
                             const TransformBank& transforms, std::size_t stride) {
  field.validate();
  return capsule_votes(PoseField{window_mix(field.poses, kernel, stride)}, transforms);
}

VoteField add_coordinates(const VoteField& field) {
  const Tensor& v = field.votes;
  if (v.dim() != 6 || v.size(5) < 2) {
    throw ShapeError("add_coordinates expects votes [N,B,J,h,w,d>=2], got " + to_string(v.shape()));
  }
  const std::size_t H = v.size(3), W = v.size(4), D = v.size(5);
  std::vector<double> offsets(H * W * D, 0.0);
  for (std::size_t x = 0; x < H; ++x)
    for (std::size_t y = 0; y < W; ++y) {
      offsets[(x * W + y) * D + D - 2] = static_cast<double>(x) / static_cast<double>(H);
      offsets[(x * W + y) * D + D - 1] = static_cast<double>(y) / static_cast<double>(W);
    }
  return VoteField{add(v, Tensor::from({H, W, D}, std::move(offsets)))};
}

}  // namespace decaps
