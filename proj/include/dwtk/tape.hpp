#pragma once

// Full-sequence forward passes that record what reverse-mode
// differentiation needs, and the matching backward passes.

#include "dwtk/model.hpp"
#include "dwtk/nn.hpp"

#include <vector>

namespace dwtk {

struct AttentionTape {
  Matrix query_input;
  Matrix kv_input;
  Matrix q, k, v;
  std::vector<Matrix> weights;  // per head, rows = queries
  Matrix context;
};

struct FeedForwardTape {
  Matrix input;
  Matrix pre_activation;
  Matrix activation;
};

struct EncoderLayerTape {
  nn::LayerNormTape<double> attn_norm;
  AttentionTape attn;
  nn::LayerNormTape<double> ffn_norm;
  FeedForwardTape ffn;
};

struct EncoderTape {
  Matrix pooled;
  std::vector<EncoderLayerTape> layers;
  nn::LayerNormTape<double> final_norm;
};

struct DecoderLayerTape {
  nn::LayerNormTape<double> self_norm;
  AttentionTape self_attn;
  nn::LayerNormTape<double> cross_norm;
  AttentionTape cross_attn;
  nn::LayerNormTape<double> ffn_norm;
  FeedForwardTape ffn;
};

struct DecoderTape {
  TokenSequence inputs;
  std::vector<DecoderLayerTape> layers;
  nn::LayerNormTape<double> final_norm;
  Matrix output;  // final-normed states fed to the shared projection
};

/// Teacher-forced decoder output: one logit row per input position and the
/// residual stream after each layer (the DecoderLayerTrace).
struct DecoderForward {
  Matrix logits;
  std::vector<Matrix> layer_states;
};

/// Stride-2 mean pooling over frame pairs (the last frame stands alone when
/// T is odd).
Matrix mean_pool(const Matrix& frames);

HiddenStates encoder_forward(const ModelParams& params, const FeatureSequence& features, EncoderTape* tape);

/// `inputs` starts with <s>. Layer states are always returned.
DecoderForward decoder_forward(const ModelParams& params, const TokenSequence& inputs, const HiddenStates& encoded,
                               DecoderTape* tape);

/// Accumulates parameter gradients into `grads`. `dstates`, if given, holds
/// extra gradients on each layer's output state (for the hidden-state loss).
/// If `dencoded` is non-null the gradient w.r.t. the encoder output is added
/// to it.
void decoder_backward(const ModelParams& params, const DecoderTape& tape, const Matrix& dlogits,
                      const std::vector<Matrix>* dstates, ModelParams& grads, Matrix* dencoded);

void encoder_backward(const ModelParams& params, const EncoderTape& tape, const Matrix& dencoded, ModelParams& grads);

}  // namespace dwtk
