#include "dwtk/tape.hpp"

#include <cmath>
#include <limits>

namespace dwtk {
namespace {

Matrix affine(const Matrix& x, const RowMatrix& w, const Vector& b) {
  Matrix y = x * w.transpose();
  y.rowwise() += b.transpose();
  return y;
}

Matrix attention_forward(const AttentionParams& p, const Matrix& query_input, const Matrix& kv_input, int heads,
                         bool causal, AttentionTape* tape) {
  const Matrix q = affine(query_input, p.wq, p.bq);
  const Matrix k = affine(kv_input, p.wk, p.bk);
  const Matrix v = affine(kv_input, p.wv, p.bv);
  const Eigen::Index head_width = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_width));

  Matrix context(q.rows(), q.cols());
  std::vector<Matrix> weights;
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * head_width;
    Matrix scores = q.middleCols(off, head_width) * k.middleCols(off, head_width).transpose() * scale;
    if (causal) {
      for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < scores.cols(); ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
      }
    }
    Matrix a = nn::softmax_rows(scores);
    context.middleCols(off, head_width) = a * v.middleCols(off, head_width);
    weights.push_back(std::move(a));
  }
  Matrix out = affine(context, p.wo, p.bo);
  if (tape != nullptr) {
    tape->query_input = query_input;
    tape->kv_input = kv_input;
    tape->q = q;
    tape->k = k;
    tape->v = v;
    tape->weights = std::move(weights);
    tape->context = std::move(context);
  }
  return out;
}

// Returns (dquery_input, dkv_input).
std::pair<Matrix, Matrix> attention_backward(const AttentionParams& p, const AttentionTape& t, const Matrix& dout,
                                             int heads, AttentionParams& g) {
  g.wo += dout.transpose() * t.context;
  g.bo += dout.colwise().sum().transpose();
  const Matrix dcontext = dout * p.wo;

  const Eigen::Index head_width = t.q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_width));
  Matrix dq = Matrix::Zero(t.q.rows(), t.q.cols());
  Matrix dk = Matrix::Zero(t.k.rows(), t.k.cols());
  Matrix dv = Matrix::Zero(t.v.rows(), t.v.cols());
  for (int h = 0; h < heads; ++h) {
    const Eigen::Index off = h * head_width;
    const Matrix& a = t.weights[static_cast<std::size_t>(h)];
    const Matrix dc = dcontext.middleCols(off, head_width);
    const Matrix da = dc * t.v.middleCols(off, head_width).transpose();
    dv.middleCols(off, head_width) = a.transpose() * dc;
    const Vector row_dot = (da.array() * a.array()).rowwise().sum().matrix();
    const Matrix ds = (a.array() * (da.colwise() - row_dot).array()).matrix() * scale;
    dq.middleCols(off, head_width) = ds * t.k.middleCols(off, head_width);
    dk.middleCols(off, head_width) = ds.transpose() * t.q.middleCols(off, head_width);
  }
  g.wq += dq.transpose() * t.query_input;
  g.bq += dq.colwise().sum().transpose();
  g.wk += dk.transpose() * t.kv_input;
  g.bk += dk.colwise().sum().transpose();
  g.wv += dv.transpose() * t.kv_input;
  g.bv += dv.colwise().sum().transpose();
  Matrix dquery = dq * p.wq;
  Matrix dkv = dk * p.wk + dv * p.wv;
  return {std::move(dquery), std::move(dkv)};
}

Matrix feed_forward(const FeedForwardParams& p, const Matrix& x, FeedForwardTape* tape) {
  Matrix pre = affine(x, p.w1, p.b1);
  Matrix act = pre.unaryExpr([](double v) { return nn::gelu(v); });
  Matrix out = affine(act, p.w2, p.b2);
  if (tape != nullptr) {
    tape->input = x;
    tape->pre_activation = std::move(pre);
    tape->activation = std::move(act);
  }
  return out;
}

Matrix feed_forward_backward(const FeedForwardParams& p, const FeedForwardTape& t, const Matrix& dout,
                             FeedForwardParams& g) {
  g.w2 += dout.transpose() * t.activation;
  g.b2 += dout.colwise().sum().transpose();
  const Matrix dact = dout * p.w2;
  const Matrix dpre = dact.cwiseProduct(t.pre_activation.unaryExpr([](double v) { return nn::gelu_grad(v); }));
  g.w1 += dpre.transpose() * t.input;
  g.b1 += dpre.colwise().sum().transpose();
  return dpre * p.w1;
}

}  // namespace

Matrix mean_pool(const Matrix& frames) {
  const Eigen::Index t = frames.rows();
  const Eigen::Index m = (t + 1) / 2;
  Matrix pooled(m, frames.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    if (2 * i + 1 < t) {
      pooled.row(i) = 0.5 * (frames.row(2 * i) + frames.row(2 * i + 1));
    } else {
      pooled.row(i) = frames.row(2 * i);
    }
  }
  return pooled;
}

HiddenStates encoder_forward(const ModelParams& params, const FeatureSequence& features, EncoderTape* tape) {
  const ModelConfig& c = params.config;
  if (features.length() < 1 || features.dim() != c.input_dim || !features.frames.allFinite()) {
    throw ValidationError("invalid features");
  }
  Matrix pooled = mean_pool(features.frames);
  if (pooled.rows() > c.max_source_positions) {
    throw ValidationError("input too long: " + std::to_string(pooled.rows()) + " encoder positions exceed " +
                          std::to_string(c.max_source_positions));
  }
  Matrix x = affine(pooled, params.input_proj, params.input_bias);
  x += params.encoder_positions.topRows(pooled.rows());

  if (tape != nullptr) tape->layers.resize(params.encoder.size());
  for (std::size_t l = 0; l < params.encoder.size(); ++l) {
    const auto& layer = params.encoder[l];
    EncoderLayerTape* lt = tape != nullptr ? &tape->layers[l] : nullptr;
    const Matrix a = nn::layer_norm(x, layer.attn_norm.gain, layer.attn_norm.bias, lt ? &lt->attn_norm : nullptr);
    x += attention_forward(layer.attn, a, a, c.heads, false, lt ? &lt->attn : nullptr);
    const Matrix b = nn::layer_norm(x, layer.ffn_norm.gain, layer.ffn_norm.bias, lt ? &lt->ffn_norm : nullptr);
    x += feed_forward(layer.ffn, b, lt ? &lt->ffn : nullptr);
  }
  HiddenStates out{nn::layer_norm(x, params.encoder_norm.gain, params.encoder_norm.bias,
                                  tape != nullptr ? &tape->final_norm : nullptr)};
  if (tape != nullptr) tape->pooled = std::move(pooled);
  return out;
}

void encoder_backward(const ModelParams& params, const EncoderTape& tape, const Matrix& dencoded, ModelParams& grads) {
  const ModelConfig& c = params.config;
  Matrix dx = nn::layer_norm_backward(dencoded, params.encoder_norm.gain, tape.final_norm, grads.encoder_norm.gain,
                                      grads.encoder_norm.bias);
  for (std::size_t l = params.encoder.size(); l-- > 0;) {
    const auto& layer = params.encoder[l];
    auto& g = grads.encoder[l];
    const auto& lt = tape.layers[l];
    const Matrix db = feed_forward_backward(layer.ffn, lt.ffn, dx, g.ffn);
    dx += nn::layer_norm_backward(db, layer.ffn_norm.gain, lt.ffn_norm, g.ffn_norm.gain, g.ffn_norm.bias);
    const auto [dq, dkv] = attention_backward(layer.attn, lt.attn, dx, c.heads, g.attn);
    const Matrix da = dq + dkv;
    dx += nn::layer_norm_backward(da, layer.attn_norm.gain, lt.attn_norm, g.attn_norm.gain, g.attn_norm.bias);
  }
  grads.input_proj += dx.transpose() * tape.pooled;
  grads.input_bias += dx.colwise().sum().transpose();
  grads.encoder_positions.topRows(dx.rows()) += dx;
}

DecoderForward decoder_forward(const ModelParams& params, const TokenSequence& inputs, const HiddenStates& encoded,
                               DecoderTape* tape) {
  const ModelConfig& c = params.config;
  const auto n = static_cast<Eigen::Index>(inputs.size());
  if (n < 1) throw ValidationError("decoder needs at least one input position");
  if (n > c.max_positions) throw ValidationError("decoder input exceeds max_positions");
  Matrix x(n, c.width);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Token t = inputs[static_cast<std::size_t>(i)];
    if (t < 0 || t >= c.vocab) throw ValidationError("token outside vocabulary");
    x.row(i) = params.embedding.row(t) + params.decoder_positions.row(i);
  }

  DecoderForward out;
  if (tape != nullptr) {
    tape->inputs = inputs;
    tape->layers.resize(params.decoder.size());
  }
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const auto& layer = params.decoder[l];
    DecoderLayerTape* lt = tape != nullptr ? &tape->layers[l] : nullptr;
    const Matrix a = nn::layer_norm(x, layer.self_norm.gain, layer.self_norm.bias, lt ? &lt->self_norm : nullptr);
    x += attention_forward(layer.self_attn, a, a, c.heads, true, lt ? &lt->self_attn : nullptr);
    const Matrix b = nn::layer_norm(x, layer.cross_norm.gain, layer.cross_norm.bias, lt ? &lt->cross_norm : nullptr);
    x += attention_forward(layer.cross_attn, b, encoded.states, c.heads, false, lt ? &lt->cross_attn : nullptr);
    const Matrix f = nn::layer_norm(x, layer.ffn_norm.gain, layer.ffn_norm.bias, lt ? &lt->ffn_norm : nullptr);
    x += feed_forward(layer.ffn, f, lt ? &lt->ffn : nullptr);
    out.layer_states.push_back(x);
  }
  Matrix y = nn::layer_norm(x, params.decoder_norm.gain, params.decoder_norm.bias,
                            tape != nullptr ? &tape->final_norm : nullptr);
  out.logits = y * params.embedding.transpose();
  if (tape != nullptr) tape->output = std::move(y);
  return out;
}

void decoder_backward(const ModelParams& params, const DecoderTape& tape, const Matrix& dlogits,
                      const std::vector<Matrix>* dstates, ModelParams& grads, Matrix* dencoded) {
  const ModelConfig& c = params.config;
  grads.embedding += dlogits.transpose() * tape.output;
  const Matrix dy = dlogits * params.embedding;
  Matrix dx = nn::layer_norm_backward(dy, params.decoder_norm.gain, tape.final_norm, grads.decoder_norm.gain,
                                      grads.decoder_norm.bias);
  for (std::size_t l = params.decoder.size(); l-- > 0;) {
    if (dstates != nullptr && (*dstates)[l].size() != 0) dx += (*dstates)[l];
    const auto& layer = params.decoder[l];
    auto& g = grads.decoder[l];
    const auto& lt = tape.layers[l];

    const Matrix df = feed_forward_backward(layer.ffn, lt.ffn, dx, g.ffn);
    dx += nn::layer_norm_backward(df, layer.ffn_norm.gain, lt.ffn_norm, g.ffn_norm.gain, g.ffn_norm.bias);

    const auto [dq_cross, dkv_cross] = attention_backward(layer.cross_attn, lt.cross_attn, dx, c.heads, g.cross_attn);
    if (dencoded != nullptr) *dencoded += dkv_cross;
    dx += nn::layer_norm_backward(dq_cross, layer.cross_norm.gain, lt.cross_norm, g.cross_norm.gain,
                                  g.cross_norm.bias);

    const auto [dq_self, dkv_self] = attention_backward(layer.self_attn, lt.self_attn, dx, c.heads, g.self_attn);
    const Matrix da = dq_self + dkv_self;
    dx += nn::layer_norm_backward(da, layer.self_norm.gain, lt.self_norm, g.self_norm.gain, g.self_norm.bias);
  }
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    grads.embedding.row(tape.inputs[static_cast<std::size_t>(i)]) += dx.row(i);
    grads.decoder_positions.row(i) += dx.row(i);
  }
}

}  // namespace dwtk
