#pragma once

#include "wisense/types.hpp"

#include <cmath>
#include <span>
#include <vector>

/// Elementwise and row-wise differentiable primitives. All backward helpers
/// return exact analytic gradients of the matching forward.
namespace wisense::nn {

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluK = 0.044715;
inline constexpr int kIgnoreIndex = -100;

/// tanh(kGeluC * (x + kGeluK x^3)) through the vectorized exponential.
template <typename Derived>
Array gelu_tanh(const Eigen::MatrixBase<Derived>& x) {
  const auto v = x.derived().array();
  // tanh saturates to +-1 in double precision well before |u| = 20.
  const Array u = (kGeluC * (v + kGeluK * v.cube())).cwiseMax(-20.0).cwiseMin(20.0);
  return 1.0 - 2.0 / ((2.0 * u).exp() + 1.0);
}

/// tanh-approximation GeLU.
template <typename Derived>
Matrix gelu(const Eigen::MatrixBase<Derived>& x) {
  const Array t = gelu_tanh(x);
  return (0.5 * x.derived().array() * (1.0 + t)).matrix();
}

inline double gelu_derivative(double v) {
  const double u = kGeluC * (v + kGeluK * v * v * v);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * v * v);
}

template <typename DX, typename DY>
Matrix gelu_backward(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& dy) {
  const Array t = gelu_tanh(x);
  const auto v = x.derived().array();
  const Array d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t.square()) * kGeluC * (1.0 + 3.0 * kGeluK * v.square());
  return (dy.derived().array() * d).matrix();
}

/// exp(d) for d <= 0, with results that would underflow into subnormals
/// replaced by exact zeros (subnormal arithmetic is orders of magnitude slower).
inline constexpr double kExpCutoff = -700.0;
template <typename Derived>
auto exp_shifted(const Eigen::ArrayBase<Derived>& d) {
  return (d < kExpCutoff).select(0.0, d.exp());
}

/// Numerically stable softmax of every row.
template <typename Derived>
Matrix softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  Matrix out = x;
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double m = row.maxCoeff();
    if (!std::isfinite(m)) {
      // Whole row masked or +inf logits: put uniform mass on the maxima.
      row = (row.array() == m).cast<double>().matrix();
      row /= row.sum();
      continue;
    }
    row = exp_shifted(row.array() - m).matrix();
    row /= row.sum();
  }
  return out;
}

/// dX for Y = softmax_rows(X) given P = Y and dY.
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs) {
  const Vector inner = probs.cwiseProduct(dprobs).rowwise().sum();
  return probs.cwiseProduct(dprobs - inner.replicate(1, dprobs.cols()));
}

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

/// Row normalization to zero mean / unit variance (before the affine part).
inline Matrix layer_norm_core(const Matrix& x, double eps, LayerNormCache* cache) {
  const Index n = x.cols();
  const Vector mean = x.rowwise().mean();
  Matrix centered = x.colwise() - mean;
  const Vector var = centered.cwiseAbs2().rowwise().sum() / static_cast<double>(n);
  const Vector inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = inv_std.asDiagonal() * centered;
  if (cache) {
    cache->xhat = xhat;
    cache->inv_std = inv_std;
  }
  return xhat;
}

inline Matrix layer_norm_core_backward(const LayerNormCache& c, const Matrix& dxhat) {
  const double n = static_cast<double>(dxhat.cols());
  const Vector mean_d = dxhat.rowwise().sum() / n;
  const Vector mean_dx = dxhat.cwiseProduct(c.xhat).rowwise().sum() / n;
  Matrix dx = dxhat.colwise() - mean_d;
  dx -= c.xhat.cwiseProduct(mean_dx.replicate(1, dxhat.cols()));
  return c.inv_std.asDiagonal() * dx;
}

/// y = v / ||v|| for every row.
inline Matrix l2_normalize_rows(const Matrix& x) {
  Matrix out = x;
  for (Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0.0) out.row(r) /= n;
  }
  return out;
}

/// Gradient through row L2 normalization given the input rows and dY.
inline Matrix l2_normalize_rows_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double n = x.row(r).norm();
    if (n == 0.0) {
      dx.row(r).setZero();
      continue;
    }
    const RowVector y = x.row(r) / n;
    dx.row(r) = (dy.row(r) - y * y.dot(dy.row(r))) / n;
  }
  return dx;
}

struct CrossEntropyResult {
  double loss = 0.0;    // mean over counted positions
  Matrix grad;          // d loss / d logits
  Index counted = 0;
  Index correct = 0;    // argmax hits over counted positions
};

/// Mean negative log-likelihood of `targets` under row-softmax(logits).
/// Positions equal to `ignore_index` contribute neither loss nor gradient.
CrossEntropyResult cross_entropy(const Matrix& logits, std::span<const int> targets,
                                 int ignore_index = kIgnoreIndex);

/// Index of the largest entry; lowest index wins ties.
template <typename Derived>
Index argmax(const Eigen::DenseBase<Derived>& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

}  // namespace wisense::nn
