#include "decaps/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

namespace decaps {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

using IndexMap = std::shared_ptr<const std::vector<std::size_t>>;

// For every flat index of `big`, the flat index of `small` (right-aligned,
// extent-1 axes broadcast) that it reads from. Null when the shapes are equal.
IndexMap broadcast_map(const Shape& small, const Shape& big) {
  if (small == big) return nullptr;
  const std::size_t rank = big.size();
  Shape padded(rank, 1);
  std::copy(small.begin(), small.end(), padded.begin() + static_cast<long>(rank - small.size()));
  const auto st = strides_of(padded);
  std::vector<std::size_t> sst(rank);
  for (std::size_t a = 0; a < rank; ++a) sst[a] = padded[a] == 1 ? 0 : st[a];

  const std::size_t n = numel(big);
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*map)[i] = off;
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      off += sst[a];
      if (idx[a] < big[a]) break;
      off -= sst[a] * big[a];
      idx[a] = 0;
    }
  }
  return map;
}

inline std::size_t at(const IndexMap& m, std::size_t i) { return m ? (*m)[i] : i; }

bool wants_grad(std::initializer_list<const Tensor*> ts) {
  if (!grad_enabled()) return false;
  for (const auto* t : ts)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

// Keepdim shape after reducing `axes` and the matching squeezed shape.
std::pair<Shape, Shape> reduced_shapes(const Shape& shape, const Axes& axes) {
  Shape keep = shape;
  std::vector<bool> reduced(shape.size(), false);
  for (int a : axes) reduced[normalize_axis(a, shape.size())] = true;
  Shape squeezed;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (reduced[i]) {
      keep[i] = 1;
    } else {
      squeezed.push_back(shape[i]);
    }
  }
  if (squeezed.empty()) squeezed.push_back(1);
  return {keep, squeezed};
}

template <class F, class DA, class DB>
Tensor binary(std::string_view name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  auto ma = broadcast_map(a.shape(), out_shape);
  auto mb = broadcast_map(b.shape(), out_shape);
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t n = numel(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[at(ma, i)], bv[at(mb, i)]);
  return Tensor::from_op(name, out_shape, std::move(out), {a, b},
                         [ma, mb, da, db](detail::Node& self) {
                           auto& pa = *self.parents[0];
                           auto& pb = *self.parents[1];
                           const auto& g = self.grad;
                           if (pa.requires_grad) {
                             auto ga = pa.grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               const std::size_t ia = at(ma, i);
                               ga[ia] += g[i] * da(pa.value[ia], pb.value[at(mb, i)]);
                             }
                           }
                           if (pb.requires_grad) {
                             auto gb = pb.grad_buffer();
                             for (std::size_t i = 0; i < g.size(); ++i) {
                               const std::size_t ib = at(mb, i);
                               gb[ib] += g[i] * db(pa.value[at(ma, i)], pb.value[ib]);
                             }
                           }
                         });
}

template <class F, class D>
Tensor unary(std::string_view name, const Tensor& x, F f, D d) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return Tensor::from_op(name, x.shape(), std::move(out), {x}, [d](detail::Node& self) {
    auto& px = *self.parents[0];
    auto gx = px.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * d(px.value[i], self.value[i]);
  });
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) +
                       " are not broadcast-compatible");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.dim() < 2 || b.dim() < 2) {
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const std::size_t m = as[as.size() - 2], k = as.back(), n = bs.back();
  if (bs[bs.size() - 2] != k) {
    throw ShapeError("matmul inner dimensions differ: " + to_string(as) + " x " + to_string(bs));
  }
  const Shape a_batch(as.begin(), as.end() - 2);
  const Shape b_batch(bs.begin(), bs.end() - 2);
  Shape out_batch = broadcast_shapes(a_batch, b_batch);
  const std::size_t batches = numel(out_batch);
  IndexMap ma, mb;
  if (out_batch.empty()) {
    out_batch = {};
  } else {
    ma = broadcast_map(a_batch.empty() ? Shape{1} : a_batch, out_batch);
    mb = broadcast_map(b_batch.empty() ? Shape{1} : b_batch, out_batch);
  }
  Shape out_shape = out_batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<double> out(batches * m * n);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t t = 0; t < batches; ++t) {
    MapConstMat A(pa + at(ma, t) * m * k, static_cast<long>(m), static_cast<long>(k));
    MapConstMat B(pb + at(mb, t) * k * n, static_cast<long>(k), static_cast<long>(n));
    MapMat C(out.data() + t * m * n, static_cast<long>(m), static_cast<long>(n));
    C.noalias() = A * B;
  }
  return Tensor::from_op("matmul", out_shape, std::move(out), {a, b},
                         [ma, mb, m, k, n, batches](detail::Node& self) {
                           auto& na = *self.parents[0];
                           auto& nb = *self.parents[1];
                           for (std::size_t t = 0; t < batches; ++t) {
                             MapConstMat G(self.grad.data() + t * m * n, static_cast<long>(m),
                                           static_cast<long>(n));
                             const std::size_t ia = at(ma, t), ib = at(mb, t);
                             MapConstMat A(na.value.data() + ia * m * k, static_cast<long>(m),
                                           static_cast<long>(k));
                             MapConstMat B(nb.value.data() + ib * k * n, static_cast<long>(k),
                                           static_cast<long>(n));
                             if (na.requires_grad) {
                               MapMat GA(na.grad_buffer().data() + ia * m * k, static_cast<long>(m),
                                         static_cast<long>(k));
                               GA.noalias() += G * B.transpose();
                             }
                             if (nb.requires_grad) {
                               MapMat GB(nb.grad_buffer().data() + ib * k * n, static_cast<long>(k),
                                         static_cast<long>(n));
                               GB.noalias() += A.transpose() * G;
                             }
                           }
                         });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions options) {
  if (x.dim() != 4 || weight.dim() != 4) {
    throw ShapeError("conv2d expects [N,C,H,W] input and [Co,Ci,kh,kw] weight, got " +
                     to_string(x.shape()) + " and " + to_string(weight.shape()));
  }
  const std::size_t N = x.size(0), Ci = x.size(1), H = x.size(2), W = x.size(3);
  const std::size_t Co = weight.size(0), kh = weight.size(2), kw = weight.size(3);
  const std::size_t s = options.stride, p = options.padding;
  if (weight.size(1) != Ci) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(x.shape()) + ", weight " +
                     to_string(weight.shape()));
  }
  if (s == 0) throw ShapeError("conv2d stride must be positive");
  if (H + 2 * p < kh || W + 2 * p < kw) {
    throw ShapeError("conv2d kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{Co}) {
    throw ShapeError("conv2d bias shape " + to_string(bias.shape()) + " != [" +
                     std::to_string(Co) + "]");
  }
  const std::size_t Ho = (H + 2 * p - kh) / s + 1, Wo = (W + 2 * p - kw) / s + 1;
  const std::size_t P = Ho * Wo, K = Ci * kh * kw, NP = N * P;

  auto cols = std::make_shared<std::vector<double>>(K * NP, 0.0);
  const auto xv = x.values();
  for (std::size_t c = 0; c < Ci; ++c) {
    for (std::size_t u = 0; u < kh; ++u) {
      for (std::size_t v = 0; v < kw; ++v) {
        double* row = cols->data() + ((c * kh + u) * kw + v) * NP;
        for (std::size_t nn = 0; nn < N; ++nn) {
          const double* img = xv.data() + (nn * Ci + c) * H * W;
          double* dst = row + nn * P;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const long iy = static_cast<long>(oy * s + u) - static_cast<long>(p);
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const long ix = static_cast<long>(ox * s + v) - static_cast<long>(p);
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              dst[oy * Wo + ox] = img[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }

  RowMat out_mat(static_cast<long>(Co), static_cast<long>(NP));
  MapConstMat Wm(weight.values().data(), static_cast<long>(Co), static_cast<long>(K));
  MapConstMat Cm(cols->data(), static_cast<long>(K), static_cast<long>(NP));
  out_mat.noalias() = Wm * Cm;

  std::vector<double> out(N * Co * P);
  for (std::size_t nn = 0; nn < N; ++nn) {
    for (std::size_t co = 0; co < Co; ++co) {
      const double b = bias.defined() ? bias.values()[co] : 0.0;
      const double* src = out_mat.data() + co * NP + nn * P;
      double* dst = out.data() + (nn * Co + co) * P;
      for (std::size_t q = 0; q < P; ++q) dst[q] = src[q] + b;
    }
  }

  std::vector<Tensor> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  if (!wants_grad({&x, &weight, &bias})) cols.reset();
  return Tensor::from_op(
      "conv2d", {N, Co, Ho, Wo}, std::move(out), std::move(parents),
      [cols, N, Ci, H, W, Co, kh, kw, s, p, Ho, Wo, P, K, NP](detail::Node& self) {
        auto& nx = *self.parents[0];
        auto& nw = *self.parents[1];
        RowMat G(static_cast<long>(Co), static_cast<long>(NP));
        for (std::size_t nn = 0; nn < N; ++nn) {
          for (std::size_t co = 0; co < Co; ++co) {
            const double* src = self.grad.data() + (nn * Co + co) * P;
            std::copy(src, src + P, G.data() + co * NP + nn * P);
          }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          auto gb = self.parents[2]->grad_buffer();
          for (std::size_t co = 0; co < Co; ++co) gb[co] += G.row(static_cast<long>(co)).sum();
        }
        if (nw.requires_grad) {
          MapMat GW(nw.grad_buffer().data(), static_cast<long>(Co), static_cast<long>(K));
          MapConstMat Cm(cols->data(), static_cast<long>(K), static_cast<long>(NP));
          GW.noalias() += G * Cm.transpose();
        }
        if (nx.requires_grad) {
          MapConstMat Wm(nw.value.data(), static_cast<long>(Co), static_cast<long>(K));
          RowMat dcols(static_cast<long>(K), static_cast<long>(NP));
          dcols.noalias() = Wm.transpose() * G;
          auto gx = nx.grad_buffer();
          for (std::size_t c = 0; c < Ci; ++c) {
            for (std::size_t u = 0; u < kh; ++u) {
              for (std::size_t v = 0; v < kw; ++v) {
                const double* row = dcols.data() + ((c * kh + u) * kw + v) * NP;
                for (std::size_t nn = 0; nn < N; ++nn) {
                  double* img = gx.data() + (nn * Ci + c) * H * W;
                  const double* srcr = row + nn * P;
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const long iy = static_cast<long>(oy * s + u) - static_cast<long>(p);
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                      const long ix = static_cast<long>(ox * s + v) - static_cast<long>(p);
                      if (ix < 0 || ix >= static_cast<long>(W)) continue;
                      img[static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)] +=
                          srcr[oy * Wo + ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor softmax(const Tensor& x, const Axes& axes) {
  const auto [keep, squeezed] = reduced_shapes(x.shape(), axes);
  auto map = broadcast_map(keep, x.shape());
  const std::size_t groups = numel(keep);
  const auto xv = x.values();
  std::vector<double> mx(groups, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < xv.size(); ++i) mx[at(map, i)] = std::max(mx[at(map, i)], xv[i]);
  std::vector<double> out(xv.size());
  std::vector<double> total(groups, 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::exp(xv[i] - mx[at(map, i)]);
    total[at(map, i)] += out[i];
  }
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] /= total[at(map, i)];
  return Tensor::from_op("softmax", x.shape(), std::move(out), {x}, [map, groups](detail::Node& self) {
    std::vector<double> dot(groups, 0.0);
    for (std::size_t i = 0; i < self.value.size(); ++i) dot[at(map, i)] += self.grad[i] * self.value[i];
    auto gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      gx[i] += self.value[i] * (self.grad[i] - dot[at(map, i)]);
  });
}

Tensor sum(const Tensor& x, const Axes& axes, bool keepdim) {
  const auto [keep, squeezed] = reduced_shapes(x.shape(), axes);
  auto map = broadcast_map(keep, x.shape());
  const auto xv = x.values();
  std::vector<double> out(numel(keep), 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) out[at(map, i)] += xv[i];
  return Tensor::from_op("sum", keepdim ? keep : squeezed, std::move(out), {x}, [map](detail::Node& self) {
    auto gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[at(map, i)];
  });
}

Tensor mean(const Tensor& x, const Axes& axes, bool keepdim) {
  const auto [keep, squeezed] = reduced_shapes(x.shape(), axes);
  const double count = static_cast<double>(x.numel()) / static_cast<double>(numel(keep));
  return scale(sum(x, axes, keepdim), 1.0 / count);
}

Tensor sum_all(const Tensor& x) {
  Axes all(x.dim());
  std::iota(all.begin(), all.end(), 0);
  return sum(x, all);
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor norm(const Tensor& x, const Axes& axes, bool keepdim) {
  const auto [keep, squeezed] = reduced_shapes(x.shape(), axes);
  auto map = broadcast_map(keep, x.shape());
  const auto xv = x.values();
  std::vector<double> out(numel(keep), 0.0);
  for (std::size_t i = 0; i < xv.size(); ++i) out[at(map, i)] += xv[i] * xv[i];
  for (auto& v : out) v = std::sqrt(v);
  return Tensor::from_op("norm", keepdim ? keep : squeezed, std::move(out), {x}, [map](detail::Node& self) {
    auto& px = *self.parents[0];
    auto gx = px.grad_buffer();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double n = self.value[at(map, i)];
      if (n > 0.0) gx[i] += self.grad[at(map, i)] * px.value[i] / n;
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size());
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == first[i];
    if (!ok) throw ShapeError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
    out_shape[ax] += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  const std::size_t out_row = out_shape[ax] * inner;

  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    const std::size_t row = t.shape()[ax] * inner;
    const auto v = t.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.data() + o * row, row, out.data() + o * out_row + off);
    off += row;
  }
  return Tensor::from_op("concat", out_shape, std::move(out), parts,
                         [offsets, outer, inner, out_row, ax](detail::Node& self) {
                           for (std::size_t k = 0; k < self.parents.size(); ++k) {
                             auto& pk = *self.parents[k];
                             if (!pk.requires_grad) continue;
                             const std::size_t row = pk.shape[ax] * inner;
                             auto g = pk.grad_buffer();
                             for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t q = 0; q < row; ++q)
                                 g[o * row + q] += self.grad[o * out_row + offsets[k] + q];
                           }
                         });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size());
  if (length == 0 || start + length > s[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") out of range on axis " + std::to_string(ax) + " of " + to_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[ax] = length;
  const std::size_t in_row = s[ax] * inner, out_row = length * inner, off = start * inner;
  const auto v = x.values();
  std::vector<double> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(v.data() + o * in_row + off, out_row, out.data() + o * out_row);
  return Tensor::from_op("slice", out_shape, std::move(out), {x},
                         [outer, in_row, out_row, off](detail::Node& self) {
                           auto g = self.parents[0]->grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t q = 0; q < out_row; ++q)
                               g[o * in_row + off + q] += self.grad[o * out_row + q];
                         });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  return Tensor::from_op("reshape", std::move(shape), x.vector(), {x}, [](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (broadcast_shapes(x.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto map = broadcast_map(x.shape(), shape);
  const auto xv = x.values();
  std::vector<double> out(numel(shape));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[at(map, i)];
  return Tensor::from_op("broadcast_to", shape, std::move(out), {x}, [map](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[at(map, i)] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& s = x.shape();
  const std::size_t rank = s.size();
  std::vector<bool> seen(rank, false);
  if (order.size() != rank) throw ShapeError("permute order rank mismatch for " + to_string(s));
  for (auto o : order) {
    if (o >= rank || seen[o]) throw ShapeError("invalid permutation for " + to_string(s));
    seen[o] = true;
  }
  const auto in_st = strides_of(s);
  Shape out_shape(rank);
  std::vector<std::size_t> st(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[order[i]];
    st[i] = in_st[order[i]];
  }
  const std::size_t n = x.numel();
  auto map = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*map)[i] = off;
    for (std::size_t a = rank; a-- > 0;) {
      ++idx[a];
      off += st[a];
      if (idx[a] < out_shape[a]) break;
      off -= st[a] * out_shape[a];
      idx[a] = 0;
    }
  }
  const auto xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[(*map)[i]];
  IndexMap cmap = map;
  return Tensor::from_op("permute", out_shape, std::move(out), {x}, [cmap](detail::Node& self) {
    auto g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*cmap)[i]] += self.grad[i];
  });
}

namespace {

struct Taps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w;  // weight of `hi`
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
  Taps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.w.resize(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    auto lo = static_cast<std::size_t>(std::floor(src));
    if (lo >= in - 1) {
      t.lo[i] = t.hi[i] = in - 1;
      t.w[i] = 0.0;
    } else {
      t.lo[i] = lo;
      t.hi[i] = lo + 1;
      t.w[i] = src - static_cast<double>(lo);
    }
  }
  return t;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.dim() < 2) throw ShapeError("resize_bilinear needs rank >= 2, got " + to_string(x.shape()));
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear to an empty size");
  const std::size_t H = x.size(-2), W = x.size(-1);
  const std::size_t outer = x.numel() / (H * W);
  auto ty = std::make_shared<Taps>(bilinear_taps(H, out_h));
  auto tx = std::make_shared<Taps>(bilinear_taps(W, out_w));
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = out_h;
  out_shape.back() = out_w;
  const auto xv = x.values();
  std::vector<double> out(outer * out_h * out_w);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = xv.data() + o * H * W;
    double* dst = out.data() + o * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const double wy = ty->w[i];
      const double* r0 = src + ty->lo[i] * W;
      const double* r1 = src + ty->hi[i] * W;
      for (std::size_t j = 0; j < out_w; ++j) {
        const double wx = tx->w[j];
        const double top = (1.0 - wx) * r0[tx->lo[j]] + wx * r0[tx->hi[j]];
        const double bot = (1.0 - wx) * r1[tx->lo[j]] + wx * r1[tx->hi[j]];
        dst[i * out_w + j] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return Tensor::from_op("resize_bilinear", out_shape, std::move(out), {x},
                         [ty, tx, outer, H, W, out_h, out_w](detail::Node& self) {
                           auto g = self.parents[0]->grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                             double* gi = g.data() + o * H * W;
                             const double* go = self.grad.data() + o * out_h * out_w;
                             for (std::size_t i = 0; i < out_h; ++i) {
                               const double wy = ty->w[i];
                               double* r0 = gi + ty->lo[i] * W;
                               double* r1 = gi + ty->hi[i] * W;
                               for (std::size_t j = 0; j < out_w; ++j) {
                                 const double wx = tx->w[j];
                                 const double v = go[i * out_w + j];
                                 r0[tx->lo[j]] += (1.0 - wy) * (1.0 - wx) * v;
                                 r0[tx->hi[j]] += (1.0 - wy) * wx * v;
                                 r1[tx->lo[j]] += wy * (1.0 - wx) * v;
                                 r1[tx->hi[j]] += wy * wx * v;
                               }
                             }
                           }
                         });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
  if (x.dim() < 2) throw ShapeError("batch_norm needs [N, C, ...], got " + to_string(x.shape()));
  const std::size_t N = x.size(0), C = x.size(1);
  const std::size_t inner = x.numel() / (N * C);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError("batch_norm affine shapes " + to_string(gamma.shape()) + ", " +
                     to_string(beta.shape()) + " do not match channels " + std::to_string(C));
  }
  if (state.running_mean.size() != C) {
    throw ShapeError("batch_norm state has " + std::to_string(state.running_mean.size()) +
                     " channels, input has " + std::to_string(C));
  }
  const std::size_t M = N * inner;
  if (training && M < 2) throw ShapeError("batch_norm training needs more than one value per channel");
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();

  auto invstd = std::make_shared<std::vector<double>>(C);
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t c = 0; c < C; ++c) {
    double mu, var;
    if (training) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t q = 0; q < inner; ++q) acc += xv[(n * C + c) * inner + q];
      mu = acc / static_cast<double>(M);
      double sq = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t q = 0; q < inner; ++q) {
          const double d = xv[(n * C + c) * inner + q] - mu;
          sq += d * d;
        }
      var = sq / static_cast<double>(M);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                             state.momentum * var * static_cast<double>(M) / static_cast<double>(M - 1);
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*invstd)[c] = is;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t q = 0; q < inner; ++q) {
        const std::size_t i = (n * C + c) * inner + q;
        (*xhat)[i] = (xv[i] - mu) * is;
        out[i] = gv[c] * (*xhat)[i] + bv[c];
      }
  }
  return Tensor::from_op(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [invstd, xhat, N, C, inner, M, training](detail::Node& self) {
        auto& nx = *self.parents[0];
        auto& ng = *self.parents[1];
        auto& nb = *self.parents[2];
        const auto& g = self.grad;
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t q = 0; q < inner; ++q) {
              const std::size_t i = (n * C + c) * inner + q;
              sum_g += g[i];
              sum_gx += g[i] * (*xhat)[i];
            }
          if (ng.requires_grad) ng.grad_buffer()[c] += sum_gx;
          if (nb.requires_grad) nb.grad_buffer()[c] += sum_g;
          if (!nx.requires_grad) continue;
          auto gx = nx.grad_buffer();
          const double gam = ng.value[c];
          const double is = (*invstd)[c];
          const double m = static_cast<double>(M);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t q = 0; q < inner; ++q) {
              const std::size_t i = (n * C + c) * inner + q;
              if (training) {
                gx[i] += gam * is * (g[i] - sum_g / m - (*xhat)[i] * sum_gx / m);
              } else {
                gx[i] += gam * is * g[i];
              }
            }
        }
      });
}

}  // namespace decaps
