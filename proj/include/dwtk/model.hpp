#pragma once

#include "dwtk/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dwtk {

/// Shape of the toy encoder-decoder.
struct ModelConfig {
  int enc_layers = 2;
  int dec_layers = 2;
  int width = 32;
  int heads = 4;
  int vocab = 64;
  int max_positions = 128;         // decoder input positions (<s> + prefix)
  int input_dim = 16;              // feature width d_in
  int max_source_positions = 128;  // encoder positions after downsampling
  int ffn_width = 128;

  static constexpr int downsample = 2;

  int head_width() const { return width / heads; }
  /// Throws ValidationError when the invariants do not hold.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct LayerNormParams {
  Vector gain;
  Vector bias;
};

/// Projections are stored out x in, row-major.
struct AttentionParams {
  RowMatrix wq, wk, wv, wo;
  Vector bq, bk, bv, bo;
};

struct FeedForwardParams {
  RowMatrix w1;
  Vector b1;
  RowMatrix w2;
  Vector b2;
};

struct EncoderLayerParams {
  LayerNormParams attn_norm;
  AttentionParams attn;
  LayerNormParams ffn_norm;
  FeedForwardParams ffn;
};

struct DecoderLayerParams {
  LayerNormParams self_norm;
  AttentionParams self_attn;
  LayerNormParams cross_norm;
  AttentionParams cross_attn;
  LayerNormParams ffn_norm;
  FeedForwardParams ffn;
};

/// Every learnable tensor. `embedding` (vocab x width) is shared between the
/// decoder input lookup and the output projection.
struct ModelParams {
  ModelConfig config;

  RowMatrix input_proj;  // width x input_dim
  Vector input_bias;
  RowMatrix encoder_positions;  // max_source_positions x width
  std::vector<EncoderLayerParams> encoder;
  LayerNormParams encoder_norm;

  RowMatrix embedding;          // vocab x width
  RowMatrix decoder_positions;  // max_positions x width
  std::vector<DecoderLayerParams> decoder;
  LayerNormParams decoder_norm;
};

/// All tensors zero, including normalization gains.
ModelParams zero_params(const ModelConfig& config);

/// Weights and positional tables uniform in +-1/sqrt(width); biases zero;
/// normalization gains one.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Flat view of one named tensor.
template <typename T>
struct BasicTensorRef {
  std::string name;
  std::span<T> values;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  bool is_encoder() const { return name.starts_with("encoder."); }
};
using TensorRef = BasicTensorRef<double>;
using ConstTensorRef = BasicTensorRef<const double>;

/// Tensors in a fixed canonical order; names look like
/// "decoder.layers.1.cross_attn.wq".
std::vector<TensorRef> tensors(ModelParams& params);
std::vector<ConstTensorRef> tensors(const ModelParams& params);

std::size_t parameter_count(const ModelParams& params);
bool all_finite(const ModelParams& params);

/// Bitwise equality of every encoder tensor.
bool same_encoder(const ModelParams& a, const ModelParams& b);

/// Stride-2 mean pool, input projection, positional table, pre-norm blocks,
/// final norm. Throws ValidationError("invalid features") on non-finite
/// input or a width mismatch.
HiddenStates encode(const ModelParams& params, const FeatureSequence& features);

/// Incremental decoder with a key/value cache. Positions are consumed in
/// order; position 0 is normally <s>. Each output row depends only on the
/// tokens at or before its position, and is bit-identical whether positions
/// are fed one at a time or as a block.
class DecoderSession {
 public:
  DecoderSession(const ModelParams& params, const HiddenStates& encoded);

  int length() const { return length_; }
  const ModelParams& params() const { return *params_; }

  struct Output {
    RowMatrix probs;                      // one distribution per fed token
    std::vector<RowMatrix> layer_states;  // d^l rows per layer, if requested
  };

  /// Runs `tokens` through all layers in one pass.
  Output feed(std::span<const Token> tokens, bool keep_layer_states = false);
  /// Convenience: feed one token and return its distribution.
  Vector next(Token token);

  /// Drops cached positions >= new_length.
  void truncate(int new_length);

  /// Layer-by-layer stepping of a single position, used by early exit.
  /// begin() embeds the token; run_layer() applies layer l (0-based) and
  /// caches its keys/values; skip_layer() caches keys/values for layer l
  /// computed from an exited state without running the layer; finish()
  /// commits the position.
  Vector begin(Token token) const;
  Vector run_layer(int layer, const Vector& state);
  void skip_layer(int layer, const Vector& state);
  void finish();
  /// softmax(W * final_norm(state)).
  Vector probabilities(const Vector& state) const;

 private:
  struct LayerCache {
    RowMatrix self_keys;
    RowMatrix self_values;
    RowMatrix cross_keys;
    RowMatrix cross_values;
  };

  void check_capacity(int count) const;
  void layer_block(int layer, RowMatrix& x, int first_position);

  const ModelParams* params_;
  std::vector<LayerCache> cache_;
  int length_ = 0;
  int source_length_ = 0;
};

/// Next-token distribution and the per-layer decoder states at the last
/// position. `prefix` excludes <s>.
struct StepResult {
  Vector probs;
  std::vector<Vector> layer_states;  // d^1 .. d^L
};

StepResult decode_step(const ModelParams& params, const TokenSequence& prefix, const HiddenStates& encoded);

/// softmax(W * final_norm(d^layer)) at the last position; layer is 1-based.
Vector layer_logits(const ModelParams& params, const TokenSequence& prefix, const HiddenStates& encoded, int layer);

/// 1-based teacher layers copied into a k-layer student:
/// 1 + round((j - 1)(L - 1)/(k - 1)), or 1..L when k == L.
std::vector<int> student_layer_selection(int teacher_layers, int student_layers);

/// phi(l) = round(l L / k), 1-based.
int layer_map_phi(int student_layer, int teacher_layers, int student_layers);
std::vector<int> layer_map(int teacher_layers, int student_layers);

/// Shrinks a teacher by copying maximally spaced layers. The embedding,
/// positional tables, and norms are copied verbatim.
ModelParams init_student(const ModelParams& teacher, int student_dec_layers, int student_enc_layers);

}  // namespace dwtk
