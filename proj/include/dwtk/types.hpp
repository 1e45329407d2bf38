#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace dwtk {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowMatrix = RowMatrixX<double>;

using Token = int;
using TokenSequence = std::vector<Token>;

/// Reserved vocabulary entries. Word tokens start at kFirstWordToken.
inline constexpr Token kBosToken = 0;
inline constexpr Token kEosToken = 1;
inline constexpr Token kFirstWordToken = 2;

/// Bad input or violated precondition; the CLI maps it to exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure while running a valid request; the CLI maps it to exit code 1.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// T x d_in input frames, one row per frame.
struct FeatureSequence {
  Matrix frames;
  double frame_rate = 8.0;

  int length() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
  double seconds() const { return length() / frame_rate; }
};

/// M x d encoder output, M = ceil(T / 2).
struct HiddenStates {
  Matrix states;

  int length() const { return static_cast<int>(states.rows()); }
};

/// Drops a trailing end-of-sequence marker if present.
inline TokenSequence strip_eos(TokenSequence tokens) {
  if (!tokens.empty() && tokens.back() == kEosToken) tokens.pop_back();
  return tokens;
}

inline bool ends_with_eos(const TokenSequence& tokens) {
  return !tokens.empty() && tokens.back() == kEosToken;
}

}  // namespace dwtk
