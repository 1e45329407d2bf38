#include "dwtk/model.hpp"
#include "rowops.hpp"

namespace dwtk {

DecoderSession::DecoderSession(const ModelParams& params, const HiddenStates& encoded) : params_(&params) {
  const ModelConfig& c = params.config;
  if (encoded.states.cols() != c.width || encoded.length() < 1) {
    throw ValidationError("encoder states do not match the decoder width");
  }
  source_length_ = encoded.length();
  const RowMatrix source = encoded.states;
  cache_.resize(params.decoder.size());
  for (std::size_t l = 0; l < params.decoder.size(); ++l) {
    const auto& cross = params.decoder[l].cross_attn;
    cache_[l].self_keys = RowMatrix::Zero(c.max_positions, c.width);
    cache_[l].self_values = RowMatrix::Zero(c.max_positions, c.width);
    cache_[l].cross_keys = rowops::affine(source, cross.wk, &cross.bk);
    cache_[l].cross_values = rowops::affine(source, cross.wv, &cross.bv);
  }
}

void DecoderSession::check_capacity(int count) const {
  if (length_ + count > params_->config.max_positions) {
    throw ValidationError("decoder input exceeds max_positions");
  }
}

void DecoderSession::layer_block(int layer, RowMatrix& x, int first_position) {
  const ModelConfig& c = params_->config;
  const auto& p = params_->decoder[static_cast<std::size_t>(layer)];
  auto& cache = cache_[static_cast<std::size_t>(layer)];
  const Eigen::Index n = x.rows();

  {
    const RowMatrix a = rowops::layer_norm(x, p.self_norm.gain, p.self_norm.bias);
    const RowMatrix q = rowops::affine(a, p.self_attn.wq, &p.self_attn.bq);
    cache.self_keys.middleRows(first_position, n) = rowops::affine(a, p.self_attn.wk, &p.self_attn.bk);
    cache.self_values.middleRows(first_position, n) = rowops::affine(a, p.self_attn.wv, &p.self_attn.bv);
    RowMatrix context(n, c.width);
    for (Eigen::Index r = 0; r < n; ++r) {
      rowops::attend(q.data() + r * c.width, cache.self_keys, cache.self_values, first_position + r + 1, c.heads,
                     context.data() + r * c.width);
    }
    x += rowops::affine(context, p.self_attn.wo, &p.self_attn.bo);
  }
  {
    const RowMatrix b = rowops::layer_norm(x, p.cross_norm.gain, p.cross_norm.bias);
    const RowMatrix q = rowops::affine(b, p.cross_attn.wq, &p.cross_attn.bq);
    RowMatrix context(n, c.width);
    for (Eigen::Index r = 0; r < n; ++r) {
      rowops::attend(q.data() + r * c.width, cache.cross_keys, cache.cross_values, source_length_, c.heads,
                     context.data() + r * c.width);
    }
    x += rowops::affine(context, p.cross_attn.wo, &p.cross_attn.bo);
  }
  {
    const RowMatrix f = rowops::layer_norm(x, p.ffn_norm.gain, p.ffn_norm.bias);
    RowMatrix hidden = rowops::affine(f, p.ffn.w1, &p.ffn.b1);
    hidden = hidden.unaryExpr([](double v) { return nn::gelu(v); });
    x += rowops::affine(hidden, p.ffn.w2, &p.ffn.b2);
  }
}

DecoderSession::Output DecoderSession::feed(std::span<const Token> tokens, bool keep_layer_states) {
  const ModelParams& p = *params_;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  check_capacity(static_cast<int>(n));
  Output out;
  if (n == 0) {
    out.probs.resize(0, p.config.vocab);
    return out;
  }
  RowMatrix x(n, p.config.width);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Token t = tokens[static_cast<std::size_t>(i)];
    if (t < 0 || t >= p.config.vocab) throw ValidationError("token outside vocabulary");
    x.row(i) = p.embedding.row(t) + p.decoder_positions.row(length_ + i);
  }
  for (int l = 0; l < p.config.dec_layers; ++l) {
    layer_block(l, x, length_);
    if (keep_layer_states) out.layer_states.push_back(x);
  }
  const RowMatrix y = rowops::layer_norm(x, p.decoder_norm.gain, p.decoder_norm.bias);
  out.probs = rowops::affine(y, p.embedding, nullptr);
  rowops::softmax_rows(out.probs);
  length_ += static_cast<int>(n);
  return out;
}

Vector DecoderSession::next(Token token) {
  const Token one[] = {token};
  return feed(one).probs.row(0).transpose();
}

void DecoderSession::truncate(int new_length) {
  if (new_length < 0 || new_length > length_) throw ValidationError("cannot truncate past the cached length");
  length_ = new_length;
}

Vector DecoderSession::begin(Token token) const {
  check_capacity(1);
  if (token < 0 || token >= params_->config.vocab) throw ValidationError("token outside vocabulary");
  return (params_->embedding.row(token) + params_->decoder_positions.row(length_)).transpose();
}

Vector DecoderSession::run_layer(int layer, const Vector& state) {
  RowMatrix x = state.transpose();
  layer_block(layer, x, length_);
  return x.row(0).transpose();
}

void DecoderSession::skip_layer(int layer, const Vector& state) {
  const auto& p = params_->decoder[static_cast<std::size_t>(layer)];
  auto& cache = cache_[static_cast<std::size_t>(layer)];
  const RowMatrix a = rowops::layer_norm(RowMatrix(state.transpose()), p.self_norm.gain, p.self_norm.bias);
  cache.self_keys.row(length_) = rowops::affine(a, p.self_attn.wk, &p.self_attn.bk);
  cache.self_values.row(length_) = rowops::affine(a, p.self_attn.wv, &p.self_attn.bv);
}

void DecoderSession::finish() {
  check_capacity(1);
  ++length_;
}

Vector DecoderSession::probabilities(const Vector& state) const {
  const ModelParams& p = *params_;
  const RowMatrix y = rowops::layer_norm(RowMatrix(state.transpose()), p.decoder_norm.gain, p.decoder_norm.bias);
  RowMatrix probs = rowops::affine(y, p.embedding, nullptr);
  rowops::softmax_rows(probs);
  return probs.row(0).transpose();
}

}  // namespace dwtk
