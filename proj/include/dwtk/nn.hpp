#pragma once

#include "dwtk/types.hpp"

#include <cmath>

namespace dwtk::nn {

inline constexpr double kLayerNormEpsilon = 1e-5;

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
}

template <typename Scalar>
Scalar gelu_grad(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::sqrt(Scalar(2))));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * Scalar(M_PI));
  return cdf + x * pdf;
}

/// Row-wise softmax.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  const VectorX<Scalar> sums = out.rowwise().sum();
  return sums.cwiseInverse().asDiagonal() * out;
}

/// Row-wise log-softmax.
template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const VectorX<Scalar> max = logits.rowwise().maxCoeff();
  MatrixX<Scalar> shifted = logits.colwise() - max;
  const VectorX<Scalar> log_sum = shifted.array().exp().rowwise().sum().log().matrix();
  shifted.colwise() -= log_sum;
  return shifted;
}

template <typename Scalar>
struct LayerNormTape {
  MatrixX<Scalar> normalized;  // (x - mean) / std
  VectorX<Scalar> inv_std;
};

/// Row-wise layer normalization y = gain * (x - mean)/sqrt(var + eps) + bias.
template <typename Derived>
MatrixX<typename Derived::Scalar> layer_norm(const Eigen::MatrixBase<Derived>& x,
                                             const VectorX<typename Derived::Scalar>& gain,
                                             const VectorX<typename Derived::Scalar>& bias,
                                             LayerNormTape<typename Derived::Scalar>* tape = nullptr) {
  using Scalar = typename Derived::Scalar;
  const VectorX<Scalar> mean = x.rowwise().mean();
  MatrixX<Scalar> centered = x.colwise() - mean;
  const VectorX<Scalar> var = centered.rowwise().squaredNorm() / Scalar(x.cols());
  const VectorX<Scalar> inv_std = (var.array() + Scalar(kLayerNormEpsilon)).rsqrt().matrix();
  MatrixX<Scalar> normalized = inv_std.asDiagonal() * centered;
  MatrixX<Scalar> y = (normalized * gain.asDiagonal()).rowwise() + bias.transpose();
  if (tape != nullptr) {
    tape->normalized = std::move(normalized);
    tape->inv_std = inv_std;
  }
  return y;
}

/// Backward of layer_norm; accumulates into dgain/dbias and returns dx.
template <typename Derived>
MatrixX<typename Derived::Scalar> layer_norm_backward(const Eigen::MatrixBase<Derived>& dy,
                                                      const VectorX<typename Derived::Scalar>& gain,
                                                      const LayerNormTape<typename Derived::Scalar>& tape,
                                                      VectorX<typename Derived::Scalar>& dgain,
                                                      VectorX<typename Derived::Scalar>& dbias) {
  using Scalar = typename Derived::Scalar;
  dgain += (dy.array() * tape.normalized.array()).colwise().sum().matrix().transpose();
  dbias += dy.colwise().sum().transpose();
  const MatrixX<Scalar> dn = dy * gain.asDiagonal();
  const Scalar inv_width = Scalar(1) / Scalar(dy.cols());
  const VectorX<Scalar> mean_dn = dn.rowwise().sum() * inv_width;
  const VectorX<Scalar> mean_dn_n = (dn.array() * tape.normalized.array()).rowwise().sum().matrix() * inv_width;
  MatrixX<Scalar> dx = dn.colwise() - mean_dn;
  dx -= mean_dn_n.asDiagonal() * tape.normalized;
  return tape.inv_std.asDiagonal() * dx;
}

}  // namespace dwtk::nn
