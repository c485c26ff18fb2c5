#pragma once

// Independent straight-line reference implementations used as test oracles.
// They operate on plain nested loops over std::vector and share no code with
// the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace decaps::oracle {

struct RoutingDims {
  std::size_t heads, parents, rows, cols, dim;
  std::size_t vote_index(std::size_t i, std::size_t j, std::size_t x, std::size_t y, std::size_t k) const {
    return (((i * parents + j) * rows + x) * cols + y) * dim + k;
  }
  std::size_t coef_index(std::size_t i, std::size_t j, std::size_t x, std::size_t y) const {
    return ((i * parents + j) * rows + x) * cols + y;
  }
};

struct RoutingTrace {
  std::vector<std::vector<double>> coefficients;  // per iteration, [I, J, H, W]
  std::vector<double> poses;                      // [J, d]
  std::vector<double> ham;                        // [I, J, H, W]
};

inline std::vector<double> squash_vector(std::vector<double> s) {
  double n2 = 0.0;
  for (double v : s) n2 += v * v;
  const double n = std::sqrt(n2);
  const double f = n2 / (1.0 + n2) / (n + 1e-12);
  for (double& v : s) v *= f;
  return s;
}

/// Inverted dynamic routing written out line by line:
///   R_pre = 0
///   repeat n times:
///     R  = softmax of R_pre over the locations (x, y) of head i, per parent j
///     A~ = R (.) V
///     P_j = squash(sum_i sum_xy A~)
///     R_pre += P_j . V            (skipped after the last iteration)
///   ham = |A~| over d
inline RoutingTrace idr(const std::vector<double>& V, const RoutingDims& D, std::size_t iterations) {
  RoutingTrace t;
  std::vector<double> logits(D.heads * D.parents * D.rows * D.cols, 0.0);
  std::vector<double> R(logits.size());
  std::vector<double> P(D.parents * D.dim);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < D.heads; ++i) {
      for (std::size_t j = 0; j < D.parents; ++j) {
        double mx = -1e300;
        for (std::size_t x = 0; x < D.rows; ++x)
          for (std::size_t y = 0; y < D.cols; ++y) mx = std::max(mx, logits[D.coef_index(i, j, x, y)]);
        double z = 0.0;
        for (std::size_t x = 0; x < D.rows; ++x)
          for (std::size_t y = 0; y < D.cols; ++y) z += std::exp(logits[D.coef_index(i, j, x, y)] - mx);
        for (std::size_t x = 0; x < D.rows; ++x)
          for (std::size_t y = 0; y < D.cols; ++y)
            R[D.coef_index(i, j, x, y)] = std::exp(logits[D.coef_index(i, j, x, y)] - mx) / z;
      }
    }
    t.coefficients.push_back(R);
    for (std::size_t j = 0; j < D.parents; ++j) {
      std::vector<double> s(D.dim, 0.0);
      for (std::size_t i = 0; i < D.heads; ++i)
        for (std::size_t x = 0; x < D.rows; ++x)
          for (std::size_t y = 0; y < D.cols; ++y)
            for (std::size_t k = 0; k < D.dim; ++k)
              s[k] += R[D.coef_index(i, j, x, y)] * V[D.vote_index(i, j, x, y, k)];
      const auto p = squash_vector(s);
      std::copy(p.begin(), p.end(), P.begin() + static_cast<long>(j * D.dim));
    }
    if (it + 1 == iterations) break;
    for (std::size_t i = 0; i < D.heads; ++i)
      for (std::size_t j = 0; j < D.parents; ++j)
        for (std::size_t x = 0; x < D.rows; ++x)
          for (std::size_t y = 0; y < D.cols; ++y) {
            double dot = 0.0;
            for (std::size_t k = 0; k < D.dim; ++k) dot += P[j * D.dim + k] * V[D.vote_index(i, j, x, y, k)];
            logits[D.coef_index(i, j, x, y)] += dot;
          }
  }
  t.poses = P;
  t.ham.assign(R.size(), 0.0);
  for (std::size_t i = 0; i < D.heads; ++i)
    for (std::size_t j = 0; j < D.parents; ++j)
      for (std::size_t x = 0; x < D.rows; ++x)
        for (std::size_t y = 0; y < D.cols; ++y) {
          double acc = 0.0;
          for (std::size_t k = 0; k < D.dim; ++k) {
            const double a = R[D.coef_index(i, j, x, y)] * V[D.vote_index(i, j, x, y, k)];
            acc += a * a;
          }
          t.ham[D.coef_index(i, j, x, y)] = std::sqrt(acc);
        }
  return t;
}

/// Bottom-up routing: every child (i, x, y) distributes itself over the
/// parents j with a softmax; otherwise the same loop as above.
inline RoutingTrace baseline(const std::vector<double>& V, const RoutingDims& D, std::size_t iterations) {
  RoutingTrace t;
  std::vector<double> logits(D.heads * D.parents * D.rows * D.cols, 0.0);
  std::vector<double> R(logits.size());
  std::vector<double> P(D.parents * D.dim);
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < D.heads; ++i)
      for (std::size_t x = 0; x < D.rows; ++x)
        for (std::size_t y = 0; y < D.cols; ++y) {
          double mx = -1e300;
          for (std::size_t j = 0; j < D.parents; ++j) mx = std::max(mx, logits[D.coef_index(i, j, x, y)]);
          double z = 0.0;
          for (std::size_t j = 0; j < D.parents; ++j) z += std::exp(logits[D.coef_index(i, j, x, y)] - mx);
          for (std::size_t j = 0; j < D.parents; ++j)
            R[D.coef_index(i, j, x, y)] = std::exp(logits[D.coef_index(i, j, x, y)] - mx) / z;
        }
    t.coefficients.push_back(R);
    for (std::size_t j = 0; j < D.parents; ++j) {
      std::vector<double> s(D.dim, 0.0);
      for (std::size_t i = 0; i < D.heads; ++i)
        for (std::size_t x = 0; x < D.rows; ++x)
          for (std::size_t y = 0; y < D.cols; ++y)
            for (std::size_t k = 0; k < D.dim; ++k)
              s[k] += R[D.coef_index(i, j, x, y)] * V[D.vote_index(i, j, x, y, k)];
      const auto p = squash_vector(s);
      std::copy(p.begin(), p.end(), P.begin() + static_cast<long>(j * D.dim));
    }
    if (it + 1 == iterations) break;
    for (std::size_t i = 0; i < D.heads; ++i)
      for (std::size_t j = 0; j < D.parents; ++j)
        for (std::size_t x = 0; x < D.rows; ++x)
          for (std::size_t y = 0; y < D.cols; ++y) {
            double dot = 0.0;
            for (std::size_t k = 0; k < D.dim; ++k) dot += P[j * D.dim + k] * V[D.vote_index(i, j, x, y, k)];
            logits[D.coef_index(i, j, x, y)] += dot;
          }
  }
  t.poses = P;
  return t;
}

/// sum_{j != t} max(0, m - (a_t - a_j))^2
inline double spread_loss(const std::vector<double>& a, std::size_t target, double m) {
  double loss = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (j == target) continue;
    const double h = std::max(0.0, m - (a[target] - a[j]));
    loss += h * h;
  }
  return loss;
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half, by enumerating every pair.
inline double auc_pairs(const std::vector<double>& scores, const std::vector<std::size_t>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t p = 0; p < scores.size(); ++p) {
    if (labels[p] != 1) continue;
    for (std::size_t n = 0; n < scores.size(); ++n) {
      if (labels[n] != 0) continue;
      ++pairs;
      if (scores[p] > scores[n]) wins += 1.0;
      else if (scores[p] == scores[n]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

/// Bilinear sample of a row-major map at output pixel (i, j) for a resize
/// from (in_h, in_w) to (out_h, out_w) with half-pixel centres.
inline double bilinear_at(const std::vector<double>& src, std::size_t in_h, std::size_t in_w, std::size_t out_h,
                          std::size_t out_w, std::size_t i, std::size_t j) {
  auto coord = [](std::size_t o, std::size_t in, std::size_t out) {
    double c = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(c, 0.0, static_cast<double>(in - 1));
  };
  const double y = coord(i, in_h, out_h), x = coord(j, in_w, out_w);
  const auto y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, in_h - 1), x1 = std::min(x0 + 1, in_w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * (1 - fx) * src[y0 * in_w + x0] + (1 - fy) * fx * src[y0 * in_w + x1] +
         fy * (1 - fx) * src[y1 * in_w + x0] + fy * fx * src[y1 * in_w + x1];
}

}  // namespace decaps::oracle
