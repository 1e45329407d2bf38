#pragma once

// Inference kernels with a fixed per-element evaluation order. Every output
// row is computed by the same sequence of IEEE operations no matter how many
// rows a call processes or where they sit in memory, which keeps block
// verification and one-token-at-a-time decoding bit-identical.

#include "dwtk/nn.hpp"
#include "dwtk/types.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dwtk::rowops {

/// out = x * w^T + b, w is out x in row-major. Rows are processed together
/// so independent accumulators overlap, but each element sums over k in
/// order.
inline RowMatrix affine(const RowMatrix& x, const RowMatrix& w, const Vector* bias) {
  const Eigen::Index n = x.rows();
  const Eigen::Index in = x.cols();
  const Eigen::Index out_dim = w.rows();
  RowMatrix xt = x.transpose();  // in x n, contiguous per k
  RowMatrix out(n, out_dim);
  std::vector<double> acc(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < out_dim; ++j) {
    const double* wj = w.data() + j * in;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (Eigen::Index k = 0; k < in; ++k) {
      const double wk = wj[k];
      const double* xk = xt.data() + k * n;
      for (Eigen::Index i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] += xk[i] * wk;
    }
    const double b = bias != nullptr ? (*bias)(j) : 0.0;
    for (Eigen::Index i = 0; i < n; ++i) out(i, j) = acc[static_cast<std::size_t>(i)] + b;
  }
  return out;
}

inline void layer_norm_row(const double* x, double* y, Eigen::Index width, const Vector& gain, const Vector& bias) {
  double sum = 0.0;
  for (Eigen::Index k = 0; k < width; ++k) sum += x[k];
  const double mean = sum / static_cast<double>(width);
  double sq = 0.0;
  for (Eigen::Index k = 0; k < width; ++k) sq += (x[k] - mean) * (x[k] - mean);
  const double inv_std = 1.0 / std::sqrt(sq / static_cast<double>(width) + nn::kLayerNormEpsilon);
  for (Eigen::Index k = 0; k < width; ++k) y[k] = gain(k) * ((x[k] - mean) * inv_std) + bias(k);
}

inline RowMatrix layer_norm(const RowMatrix& x, const Vector& gain, const Vector& bias) {
  RowMatrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    layer_norm_row(x.data() + i * x.cols(), y.data() + i * y.cols(), x.cols(), gain, bias);
  }
  return y;
}

inline void softmax_row(double* v, Eigen::Index n) {
  double max = v[0];
  for (Eigen::Index j = 1; j < n; ++j) max = std::max(max, v[j]);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    v[j] = std::exp(v[j] - max);
    sum += v[j];
  }
  for (Eigen::Index j = 0; j < n; ++j) v[j] /= sum;
}

inline void softmax_rows(RowMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) softmax_row(m.data() + i * m.cols(), m.cols());
}

/// Multi-head attention of one query row over the first `count` key/value
/// rows; writes the concatenated head outputs to `out`.
inline void attend(const double* query, const RowMatrix& keys, const RowMatrix& values, Eigen::Index count,
                   int heads, double* out) {
  const Eigen::Index width = keys.cols();
  const Eigen::Index head_width = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_width));
  std::vector<double> weights(static_cast<std::size_t>(count));
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index offset = h * head_width;
    for (Eigen::Index j = 0; j < count; ++j) {
      const double* key = keys.data() + j * width + offset;
      double dot = 0.0;
      for (Eigen::Index k = 0; k < head_width; ++k) dot += query[offset + k] * key[k];
      weights[static_cast<std::size_t>(j)] = dot * scale;
    }
    softmax_row(weights.data(), count);
    for (Eigen::Index k = 0; k < head_width; ++k) out[offset + k] = 0.0;
    for (Eigen::Index j = 0; j < count; ++j) {
      const double a = weights[static_cast<std::size_t>(j)];
      const double* value = values.data() + j * width + offset;
      for (Eigen::Index k = 0; k < head_width; ++k) out[offset + k] += a * value[k];
    }
  }
}

}  // namespace dwtk::rowops
