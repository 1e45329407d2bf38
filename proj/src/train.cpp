#include "dwtk/losses.hpp"

#include "dwtk/parallel.hpp"
#include "dwtk/random.hpp"
#include "objective.hpp"

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>

namespace dwtk {
namespace {

void zero(ModelParams& p) {
  for (auto& t : tensors(p)) std::fill(t.values.begin(), t.values.end(), 0.0);
}

bool finite(const LossBreakdown& l) {
  return std::isfinite(l.total) && std::isfinite(l.pl) && std::isfinite(l.kl) && std::isfinite(l.mse) &&
         std::isfinite(l.ce);
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw ValidationError("steps must be positive");
  if (batch_size < 1) throw ValidationError("batch size must be positive");
  if (warmup_steps < 0 || warmup_steps > steps) throw ValidationError("warmup must lie in [0, steps]");
  if (!(peak_lr > 0)) throw ValidationError("peak learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ValidationError("betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
  if (weight_decay < 0) throw ValidationError("weight decay must be non-negative");
  if (!(max_grad_norm > 0)) throw ValidationError("max grad norm must be positive");
  if (jobs < 1) throw ValidationError("jobs must be positive");
}

double learning_rate(const TrainConfig& config, int step) {
  if (step <= 0) return 0.0;
  if (step <= config.warmup_steps) {
    return config.peak_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  if (step >= config.steps) return 0.0;
  return config.peak_lr * static_cast<double>(config.steps - step) /
         static_cast<double>(config.steps - config.warmup_steps);
}

double clip_global_norm(ModelParams& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& t : tensors(std::as_const(grads))) {
    for (double v : t.values) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& t : tensors(grads)) {
      for (double& v : t.values) v *= scale;
    }
  }
  return norm;
}

AdamW::AdamW(const ModelParams& params, const TrainConfig& config) : config_(config) {
  for (const auto& t : tensors(params)) {
    m_.emplace_back(t.values.size(), 0.0);
    v_.emplace_back(t.values.size(), 0.0);
  }
}

void AdamW::step(ModelParams& params, const ModelParams& grads, double lr, bool skip_encoder) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  auto p = tensors(params);
  const auto g = tensors(grads);
  if (p.size() != m_.size()) throw ValidationError("optimizer state does not match the model");
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (skip_encoder && p[k].is_encoder()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double gi = g[k].values[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
      double& w = p[k].values[i];
      w -= lr * (update + config_.weight_decay * w);
    }
  }
}

TrainResult train(ModelParams student, const ModelParams* teacher, std::span<const TrainingExample> corpus,
                  const TrainConfig& config, const LossWeights& weights) {
  config.validate();
  weights.validate();
  if (corpus.empty()) throw ValidationError("empty training corpus");
  if (teacher != nullptr && teacher->config.vocab != student.config.vocab) {
    throw ValidationError("student and teacher vocabularies differ");
  }

  // Frozen encoders give the same hidden states every step.
  std::vector<HiddenStates> student_h;
  std::vector<HiddenStates> teacher_h;
  const bool shared = teacher != nullptr && config.freeze_encoder && same_encoder(student, *teacher) &&
                      student.config.width == teacher->config.width;
  if (config.freeze_encoder) {
    student_h.resize(corpus.size());
    parallel_for(corpus.size(), config.jobs, [&](std::size_t i) { student_h[i] = encode(student, corpus[i].features); });
  }
  if (teacher != nullptr && !shared) {
    teacher_h.resize(corpus.size());
    parallel_for(corpus.size(), config.jobs, [&](std::size_t i) { teacher_h[i] = encode(*teacher, corpus[i].features); });
  }
  auto cached_for = [&](std::size_t i) {
    detail::CachedEncodings c;
    if (config.freeze_encoder) c.student = &student_h[i];
    if (teacher != nullptr) c.teacher = shared ? &student_h[i] : &teacher_h[i];
    return c;
  };

  ObjectiveOptions options;
  options.teacher = teacher;
  options.freeze_encoder = config.freeze_encoder;
  options.report_ce = config.log_ce;

  AdamW optimizer(student, config);
  Rng rng(derive_seed(config.seed, "batches"));
  std::vector<std::size_t> order = permutation(corpus.size(), rng);
  std::size_t cursor = 0;

  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<ModelParams> grads(batch, zero_params(student.config));
  std::vector<LossBreakdown> losses(batch);
  std::vector<std::size_t> picks(batch);
  ModelParams total = zero_params(student.config);

  TrainResult result;
  result.log.reserve(static_cast<std::size_t>(config.steps));
  for (int s = 1; s <= config.steps; ++s) {
    for (auto& pick : picks) {
      if (cursor == order.size()) {
        order = permutation(corpus.size(), rng);
        cursor = 0;
      }
      pick = order[cursor++];
    }
    parallel_for(batch, config.jobs, [&](std::size_t b) {
      zero(grads[b]);
      losses[b] = detail::example_objective(student, corpus[picks[b]], weights, options, cached_for(picks[b]),
                                            &grads[b]);
    });

    zero(total);
    auto sum = tensors(total);
    LossBreakdown mean;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto part = tensors(std::as_const(grads[b]));
      for (std::size_t k = 0; k < sum.size(); ++k) {
        for (std::size_t e = 0; e < sum[k].values.size(); ++e) sum[k].values[e] += part[k].values[e];
      }
      mean.ce += losses[b].ce;
      mean.pl += losses[b].pl;
      mean.kl += losses[b].kl;
      mean.mse += losses[b].mse;
    }
    const double inv = 1.0 / static_cast<double>(batch);
    for (auto& t : sum) {
      for (double& v : t.values) v *= inv;
    }
    mean.ce *= inv;
    mean.pl *= inv;
    mean.kl *= inv;
    mean.mse *= inv;
    mean = kd_objective(mean, weights);
    if (!finite(mean)) throw RuntimeError("non-finite loss at step " + std::to_string(s));
    if (!all_finite(total)) throw RuntimeError("non-finite gradient at step " + std::to_string(s));

    const double norm = clip_global_norm(total, config.max_grad_norm);
    const double lr = learning_rate(config, s);
    optimizer.step(student, total, lr, config.freeze_encoder);
    result.log.push_back({s, lr, mean, norm});
  }
  if (!all_finite(student)) throw RuntimeError("non-finite parameters after training");
  result.model = std::move(student);
  return result;
}

std::string loss_log_csv(const std::vector<LossLogRow>& log) {
  std::ostringstream out;
  out << "step,lr,ce,pl,kl,mse,total,grad_norm\n";
  char buf[512];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.lr, r.loss.ce, r.loss.pl,
                  r.loss.kl, r.loss.mse, r.loss.total, r.grad_norm);
    out << buf;
  }
  return out.str();
}

}  // namespace dwtk
