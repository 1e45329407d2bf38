#include "dwtk/losses.hpp"

#include "dwtk/nn.hpp"
#include "dwtk/parallel.hpp"
#include "dwtk/tape.hpp"
#include "objective.hpp"

#include <cmath>

namespace dwtk {
namespace {

constexpr double kProbabilityFloor = 1e-30;

TokenSequence decoder_inputs(const TokenSequence& targets) {
  TokenSequence in{kBosToken};
  in.insert(in.end(), targets.begin(), targets.end());
  return in;
}

TokenSequence decoder_outputs(const TokenSequence& targets) {
  TokenSequence out = targets;
  out.push_back(kEosToken);
  return out;
}

void zero(ModelParams& p) {
  for (auto& t : tensors(p)) std::fill(t.values.begin(), t.values.end(), 0.0);
}

}  // namespace

void LossWeights::validate() const {
  if (alpha_kl < 0 || alpha_pl < 0 || alpha_mse < 0) throw ValidationError("loss weights must be non-negative");
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");
}

double ce_loss(const Matrix& probs, const TokenSequence& targets, bool* clamped) {
  if (probs.rows() != static_cast<Eigen::Index>(targets.size())) {
    throw ValidationError("probability rows and targets differ in length");
  }
  double loss = 0.0;
  bool any_clamped = false;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const Token t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= probs.cols()) throw ValidationError("target outside vocabulary");
    double p = probs(i, t);
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      any_clamped = true;
    }
    loss -= std::log(p);
  }
  if (clamped != nullptr) *clamped = any_clamped;
  return loss;
}

double pl_loss(const Matrix& probs, const TokenSequence& pseudo_targets, bool* clamped) {
  return ce_loss(probs, pseudo_targets, clamped);
}

double kl_loss(const Matrix& student_logits, const Matrix& teacher_logits, double temperature) {
  if (student_logits.rows() != teacher_logits.rows() || student_logits.cols() != teacher_logits.cols()) {
    throw ValidationError("student and teacher logits differ in shape");
  }
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");
  const Matrix log_p = nn::log_softmax_rows(student_logits / temperature);
  const Matrix log_q = nn::log_softmax_rows(teacher_logits / temperature);
  const double kl = (log_q.array().exp() * (log_q - log_p).array()).sum();
  // Rounding can push a near-zero divergence slightly negative.
  return temperature * temperature * std::max(0.0, kl);
}

double mse_loss(const std::vector<Matrix>& student_trace, const std::vector<Matrix>& teacher_trace,
                const std::vector<int>& phi) {
  if (phi.size() != student_trace.size()) throw ValidationError("layer map does not cover the student layers");
  double total = 0.0;
  for (std::size_t l = 0; l < student_trace.size(); ++l) {
    const int mapped = phi[l];
    if (mapped < 1 || mapped > static_cast<int>(teacher_trace.size())) {
      throw ValidationError("layer map points outside the teacher");
    }
    const Matrix& s = student_trace[l];
    const Matrix& t = teacher_trace[static_cast<std::size_t>(mapped - 1)];
    if (s.cols() != t.cols()) throw ValidationError("student and teacher widths differ");
    if (s.rows() != t.rows()) throw ValidationError("student and teacher traces differ in length");
    total += (s - t).squaredNorm() / static_cast<double>(s.cols());
  }
  return total;
}

LossBreakdown kd_objective(LossBreakdown terms, const LossWeights& weights) {
  terms.total = weights.alpha_kl * terms.kl + weights.alpha_pl * terms.pl + weights.alpha_mse * terms.mse;
  return terms;
}

namespace detail {

LossBreakdown example_objective(const ModelParams& student, const TrainingExample& example,
                                const LossWeights& weights, const ObjectiveOptions& options,
                                const CachedEncodings& cached, ModelParams* grads) {
  const bool needs_teacher = weights.alpha_kl > 0 || weights.alpha_mse > 0;
  if (needs_teacher && options.teacher == nullptr) {
    throw ValidationError("KL and hidden-state terms need a teacher model");
  }
  const TokenSequence inputs = decoder_inputs(example.targets);
  const TokenSequence outputs = decoder_outputs(example.targets);

  EncoderTape encoder_tape;
  HiddenStates student_encoded;
  const HiddenStates* student_h = nullptr;
  if (options.freeze_encoder && cached.student != nullptr) {
    student_h = cached.student;
  } else {
    const bool taped = grads != nullptr && !options.freeze_encoder;
    student_encoded = encoder_forward(student, example.features, taped ? &encoder_tape : nullptr);
    student_h = &student_encoded;
  }

  DecoderTape decoder_tape;
  const DecoderForward sf = decoder_forward(student, inputs, *student_h, grads != nullptr ? &decoder_tape : nullptr);
  const Matrix log_p = nn::log_softmax_rows(sf.logits);
  const Matrix p = log_p.array().exp().matrix();
  const auto n = static_cast<Eigen::Index>(outputs.size());

  LossBreakdown terms;
  Matrix dlogits = Matrix::Zero(n, sf.logits.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Token t = outputs[static_cast<std::size_t>(i)];
    if (t < 0 || t >= student.config.vocab) throw ValidationError("target outside vocabulary");
    terms.pl -= log_p(i, t);
  }
  if (grads != nullptr && weights.alpha_pl != 0) {
    Matrix d = p;
    for (Eigen::Index i = 0; i < n; ++i) d(i, outputs[static_cast<std::size_t>(i)]) -= 1.0;
    dlogits += weights.alpha_pl * d;
  }

  std::vector<Matrix> dstates;
  if (options.teacher != nullptr) {
    const ModelParams& teacher = *options.teacher;
    HiddenStates teacher_encoded;
    const HiddenStates* teacher_h = cached.teacher;
    if (teacher_h == nullptr) {
      teacher_encoded = encode(teacher, example.features);
      teacher_h = &teacher_encoded;
    }
    const DecoderForward tf = decoder_forward(teacher, inputs, *teacher_h, nullptr);
    if (tf.logits.cols() != sf.logits.cols()) throw ValidationError("student and teacher vocabularies differ");

    const double tau = weights.temperature;
    const Matrix log_ps = nn::log_softmax_rows(sf.logits / tau);
    const Matrix log_qt = nn::log_softmax_rows(tf.logits / tau);
    const Matrix qt = log_qt.array().exp().matrix();
    terms.kl = tau * tau * (qt.array() * (log_qt - log_ps).array()).sum();
    if (grads != nullptr && weights.alpha_kl != 0) {
      dlogits += weights.alpha_kl * tau * (log_ps.array().exp().matrix() - qt);
    }

    const bool comparable = student.config.width == teacher.config.width &&
                            student.config.dec_layers <= teacher.config.dec_layers;
    if (comparable) {
      const auto phi = layer_map(teacher.config.dec_layers, student.config.dec_layers);
      terms.mse = mse_loss(sf.layer_states, tf.layer_states, phi);
      if (grads != nullptr && weights.alpha_mse != 0) {
        const double scale = weights.alpha_mse * 2.0 / static_cast<double>(student.config.width);
        for (std::size_t l = 0; l < phi.size(); ++l) {
          dstates.push_back(scale * (sf.layer_states[l] - tf.layer_states[static_cast<std::size_t>(phi[l] - 1)]));
        }
      }
    } else if (weights.alpha_mse > 0) {
      throw ValidationError("hidden-state loss needs equal widths and no more student than teacher layers");
    }
  }

  if (options.report_ce && !example.ground_truth.empty()) {
    if (example.ground_truth == example.targets) {
      terms.ce = terms.pl;
    } else {
      const TokenSequence gt_out = decoder_outputs(example.ground_truth);
      const DecoderForward gf = decoder_forward(student, decoder_inputs(example.ground_truth), *student_h, nullptr);
      const Matrix gt_log_p = nn::log_softmax_rows(gf.logits);
      for (std::size_t i = 0; i < gt_out.size(); ++i) terms.ce -= gt_log_p(static_cast<Eigen::Index>(i), gt_out[i]);
    }
  }

  if (grads != nullptr) {
    Matrix dencoded;
    if (!options.freeze_encoder) dencoded = Matrix::Zero(student_h->states.rows(), student_h->states.cols());
    decoder_backward(student, decoder_tape, dlogits, dstates.empty() ? nullptr : &dstates, *grads,
                     options.freeze_encoder ? nullptr : &dencoded);
    if (!options.freeze_encoder) encoder_backward(student, encoder_tape, dencoded, *grads);
  }
  return kd_objective(terms, weights);
}

}  // namespace detail

LossBreakdown objective(const ModelParams& student, std::span<const TrainingExample> batch,
                        const LossWeights& weights, const ObjectiveOptions& options) {
  if (batch.empty()) throw ValidationError("empty batch");
  weights.validate();
  LossBreakdown sum;
  for (const auto& example : batch) {
    const auto l = detail::example_objective(student, example, weights, options, {}, nullptr);
    sum.ce += l.ce;
    sum.pl += l.pl;
    sum.kl += l.kl;
    sum.mse += l.mse;
  }
  const double b = static_cast<double>(batch.size());
  sum.ce /= b;
  sum.pl /= b;
  sum.kl /= b;
  sum.mse /= b;
  return kd_objective(sum, weights);
}

GradientResult backward(const ModelParams& student, std::span<const TrainingExample> batch,
                        const LossWeights& weights, const ObjectiveOptions& options, int jobs) {
  if (batch.empty()) throw ValidationError("empty batch");
  weights.validate();
  std::vector<ModelParams> per_example(batch.size(), student);
  std::vector<LossBreakdown> losses(batch.size());
  parallel_for(batch.size(), jobs, [&](std::size_t i) {
    zero(per_example[i]);
    losses[i] = detail::example_objective(student, batch[i], weights, options, {}, &per_example[i]);
  });

  GradientResult result{student, {}};
  zero(result.grads);
  auto total = tensors(result.grads);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto part = tensors(std::as_const(per_example[i]));
    for (std::size_t k = 0; k < total.size(); ++k) {
      for (std::size_t e = 0; e < total[k].values.size(); ++e) total[k].values[e] += part[k].values[e];
    }
    result.loss.ce += losses[i].ce;
    result.loss.pl += losses[i].pl;
    result.loss.kl += losses[i].kl;
    result.loss.mse += losses[i].mse;
  }
  const double b = static_cast<double>(batch.size());
  for (auto& t : total) {
    for (double& v : t.values) {
      v /= b;
      if (!std::isfinite(v)) throw RuntimeError("non-finite gradient in " + t.name);
    }
  }
  result.loss.ce /= b;
  result.loss.pl /= b;
  result.loss.kl /= b;
  result.loss.mse /= b;
  result.loss = kd_objective(result.loss, weights);
  return result;
}

}  // namespace dwtk
