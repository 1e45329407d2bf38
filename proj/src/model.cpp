#include "dwtk/model.hpp"

#include "dwtk/random.hpp"
#include "dwtk/tape.hpp"

#include <cmath>
#include <cstring>
#include <type_traits>

namespace dwtk {
namespace {

template <typename P, typename Fn>
void visit_norm(P& p, const std::string& name, Fn& fn) {
  fn(name + ".gain", p.gain);
  fn(name + ".bias", p.bias);
}

template <typename P, typename Fn>
void visit_attention(P& p, const std::string& name, Fn& fn) {
  fn(name + ".wq", p.wq);
  fn(name + ".bq", p.bq);
  fn(name + ".wk", p.wk);
  fn(name + ".bk", p.bk);
  fn(name + ".wv", p.wv);
  fn(name + ".bv", p.bv);
  fn(name + ".wo", p.wo);
  fn(name + ".bo", p.bo);
}

template <typename P, typename Fn>
void visit_ffn(P& p, const std::string& name, Fn& fn) {
  fn(name + ".w1", p.w1);
  fn(name + ".b1", p.b1);
  fn(name + ".w2", p.w2);
  fn(name + ".b2", p.b2);
}

// Canonical tensor order; shared by tensors(), checkpoints, and optimizers.
template <typename P, typename Fn>
void visit(P& p, Fn&& fn) {
  fn(std::string("encoder.input_proj"), p.input_proj);
  fn(std::string("encoder.input_bias"), p.input_bias);
  fn(std::string("encoder.positions"), p.encoder_positions);
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const std::string prefix = "encoder.layers." + std::to_string(l);
    visit_norm(p.encoder[l].attn_norm, prefix + ".attn_norm", fn);
    visit_attention(p.encoder[l].attn, prefix + ".attn", fn);
    visit_norm(p.encoder[l].ffn_norm, prefix + ".ffn_norm", fn);
    visit_ffn(p.encoder[l].ffn, prefix + ".ffn", fn);
  }
  visit_norm(p.encoder_norm, "encoder.norm", fn);
  fn(std::string("decoder.embedding"), p.embedding);
  fn(std::string("decoder.positions"), p.decoder_positions);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const std::string prefix = "decoder.layers." + std::to_string(l);
    visit_norm(p.decoder[l].self_norm, prefix + ".self_norm", fn);
    visit_attention(p.decoder[l].self_attn, prefix + ".self_attn", fn);
    visit_norm(p.decoder[l].cross_norm, prefix + ".cross_norm", fn);
    visit_attention(p.decoder[l].cross_attn, prefix + ".cross_attn", fn);
    visit_norm(p.decoder[l].ffn_norm, prefix + ".ffn_norm", fn);
    visit_ffn(p.decoder[l].ffn, prefix + ".ffn", fn);
  }
  visit_norm(p.decoder_norm, "decoder.norm", fn);
}

LayerNormParams zero_norm(int width) { return {Vector::Zero(width), Vector::Zero(width)}; }

AttentionParams zero_attention(int width) {
  AttentionParams a;
  a.wq = a.wk = a.wv = a.wo = RowMatrix::Zero(width, width);
  a.bq = a.bk = a.bv = a.bo = Vector::Zero(width);
  return a;
}

FeedForwardParams zero_ffn(int width, int hidden) {
  return {RowMatrix::Zero(hidden, width), Vector::Zero(hidden), RowMatrix::Zero(width, hidden), Vector::Zero(width)};
}

}  // namespace

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("invalid model config: ") + what);
  };
  require(enc_layers >= 1, "enc_layers must be >= 1");
  require(dec_layers >= 1, "dec_layers must be >= 1");
  require(width >= 1 && heads >= 1 && width % heads == 0, "width must be divisible by heads");
  require(vocab >= 2, "vocab must be >= 2");
  require(max_positions >= 1 && max_source_positions >= 1, "position tables must be non-empty");
  require(input_dim >= 1 && ffn_width >= 1, "input_dim and ffn_width must be >= 1");
}

ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  const int d = config.width;
  ModelParams p;
  p.config = config;
  p.input_proj = RowMatrix::Zero(d, config.input_dim);
  p.input_bias = Vector::Zero(d);
  p.encoder_positions = RowMatrix::Zero(config.max_source_positions, d);
  for (int l = 0; l < config.enc_layers; ++l) {
    p.encoder.push_back({zero_norm(d), zero_attention(d), zero_norm(d), zero_ffn(d, config.ffn_width)});
  }
  p.encoder_norm = zero_norm(d);
  p.embedding = RowMatrix::Zero(config.vocab, d);
  p.decoder_positions = RowMatrix::Zero(config.max_positions, d);
  for (int l = 0; l < config.dec_layers; ++l) {
    p.decoder.push_back({zero_norm(d), zero_attention(d), zero_norm(d), zero_attention(d), zero_norm(d),
                         zero_ffn(d, config.ffn_width)});
  }
  p.decoder_norm = zero_norm(d);
  return p;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config);
  Rng rng(derive_seed(seed, "init"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.width));
  visit(p, [&](const std::string& name, auto& tensor) {
    if (name.ends_with(".gain")) {
      tensor.setOnes();
      return;
    }
    if constexpr (std::is_same_v<std::decay_t<decltype(tensor)>, RowMatrix>) {
      for (Eigen::Index i = 0; i < tensor.size(); ++i) tensor.data()[i] = rng.uniform(-scale, scale);
    }
  });
  return p;
}

std::vector<TensorRef> tensors(ModelParams& params) {
  std::vector<TensorRef> out;
  visit(params, [&](const std::string& name, auto& t) {
    out.push_back({name, std::span<double>(t.data(), static_cast<std::size_t>(t.size())), t.rows(), t.cols()});
  });
  return out;
}

std::vector<ConstTensorRef> tensors(const ModelParams& params) {
  std::vector<ConstTensorRef> out;
  visit(params, [&](const std::string& name, const auto& t) {
    out.push_back(
        {name, std::span<const double>(t.data(), static_cast<std::size_t>(t.size())), t.rows(), t.cols()});
  });
  return out;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& t : tensors(params)) n += t.values.size();
  return n;
}

bool all_finite(const ModelParams& params) {
  for (const auto& t : tensors(params)) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

bool same_encoder(const ModelParams& a, const ModelParams& b) {
  if (a.config.enc_layers != b.config.enc_layers || a.config.width != b.config.width ||
      a.config.input_dim != b.config.input_dim || a.config.max_source_positions != b.config.max_source_positions) {
    return false;
  }
  const auto ta = tensors(a);
  const auto tb = tensors(b);
  for (std::size_t i = 0; i < ta.size() && ta[i].is_encoder(); ++i) {
    if (ta[i].values.size() != tb[i].values.size() ||
        std::memcmp(ta[i].values.data(), tb[i].values.data(), ta[i].values.size_bytes()) != 0) {
      return false;
    }
  }
  return true;
}

HiddenStates encode(const ModelParams& params, const FeatureSequence& features) {
  return encoder_forward(params, features, nullptr);
}

StepResult decode_step(const ModelParams& params, const TokenSequence& prefix, const HiddenStates& encoded) {
  if (static_cast<int>(prefix.size()) >= params.config.max_positions) {
    throw ValidationError("prefix overflows max_positions");
  }
  DecoderSession session(params, encoded);
  TokenSequence inputs{kBosToken};
  inputs.insert(inputs.end(), prefix.begin(), prefix.end());
  auto out = session.feed(inputs, true);
  StepResult result;
  const Eigen::Index last = out.probs.rows() - 1;
  result.probs = out.probs.row(last).transpose();
  for (const auto& states : out.layer_states) result.layer_states.push_back(states.row(last).transpose());
  return result;
}

Vector layer_logits(const ModelParams& params, const TokenSequence& prefix, const HiddenStates& encoded, int layer) {
  if (layer < 1 || layer > params.config.dec_layers) throw ValidationError("layer out of range");
  const StepResult step = decode_step(params, prefix, encoded);
  DecoderSession session(params, encoded);
  return session.probabilities(step.layer_states[static_cast<std::size_t>(layer - 1)]);
}

std::vector<int> student_layer_selection(int teacher_layers, int student_layers) {
  if (student_layers < 1 || student_layers > teacher_layers) {
    throw ValidationError("student layer count must be in [1, teacher layers]");
  }
  std::vector<int> picks;
  if (student_layers == teacher_layers) {
    for (int l = 1; l <= teacher_layers; ++l) picks.push_back(l);
    return picks;
  }
  if (student_layers == 1) throw ValidationError("maximally spaced selection needs at least 2 student layers");
  const int span = teacher_layers - 1;
  const int gaps = student_layers - 1;
  for (int j = 1; j <= student_layers; ++j) {
    // round half up of (j - 1) * span / gaps
    picks.push_back(1 + (2 * (j - 1) * span + gaps) / (2 * gaps));
  }
  return picks;
}

int layer_map_phi(int student_layer, int teacher_layers, int student_layers) {
  if (student_layers < 1 || student_layers > teacher_layers || student_layer < 1 || student_layer > student_layers) {
    throw ValidationError("layer map arguments out of range");
  }
  return (2 * student_layer * teacher_layers + student_layers) / (2 * student_layers);
}

std::vector<int> layer_map(int teacher_layers, int student_layers) {
  std::vector<int> phi;
  for (int l = 1; l <= student_layers; ++l) phi.push_back(layer_map_phi(l, teacher_layers, student_layers));
  return phi;
}

ModelParams init_student(const ModelParams& teacher, int student_dec_layers, int student_enc_layers) {
  const auto dec_picks = student_layer_selection(teacher.config.dec_layers, student_dec_layers);
  if (student_dec_layers == 1) throw ValidationError("student decoder needs at least 2 layers");
  const auto enc_picks = student_layer_selection(teacher.config.enc_layers, student_enc_layers);

  ModelParams student = teacher;
  student.config.dec_layers = student_dec_layers;
  student.config.enc_layers = student_enc_layers;
  student.encoder.clear();
  for (int l : enc_picks) student.encoder.push_back(teacher.encoder[static_cast<std::size_t>(l - 1)]);
  student.decoder.clear();
  for (int l : dec_picks) student.decoder.push_back(teacher.decoder[static_cast<std::size_t>(l - 1)]);
  return student;
}

}  // namespace dwtk
