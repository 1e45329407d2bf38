#pragma once

#include "dwtk/model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dwtk {

struct LossWeights {
  double alpha_kl = 0.8;
  double alpha_pl = 1.0;
  double alpha_mse = 0.0;
  double temperature = 2.0;

  void validate() const;
};

/// Per-term values in nats, summed over positions and averaged over the
/// batch. `ce` is against ground truth and is reported only.
struct LossBreakdown {
  double ce = 0.0;
  double pl = 0.0;
  double kl = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

/// -sum_i log p_i(target_i). Rows of `probs` are distributions; the target
/// sequence has one entry per row. Probabilities below 1e-30 are clamped and
/// reported through `clamped` when given.
double ce_loss(const Matrix& probs, const TokenSequence& targets, bool* clamped = nullptr);

/// ce_loss against pseudo-label targets.
double pl_loss(const Matrix& probs, const TokenSequence& pseudo_targets, bool* clamped = nullptr);

/// sum_i tau^2 KL(softmax(teacher_i / tau) || softmax(student_i / tau)).
double kl_loss(const Matrix& student_logits, const Matrix& teacher_logits, double temperature);

/// sum_l sum_i mean_k (student_l[i, k] - teacher_phi(l)[i, k])^2, with
/// `phi` holding 1-based teacher layers.
double mse_loss(const std::vector<Matrix>& student_trace, const std::vector<Matrix>& teacher_trace,
                const std::vector<int>& phi);

/// Fills `total` from the three weighted terms.
LossBreakdown kd_objective(LossBreakdown terms, const LossWeights& weights);

/// One pseudo-labelled training example. Targets exclude <s> and </s>; the
/// decoder reads <s> + targets and predicts targets + </s>.
struct TrainingExample {
  FeatureSequence features;
  TokenSequence targets;
  TokenSequence ground_truth;  // optional, for CE reporting
};

struct ObjectiveOptions {
  const ModelParams* teacher = nullptr;  // required when alpha_kl or alpha_mse > 0
  bool freeze_encoder = false;
  bool report_ce = false;
};

/// Batch-averaged objective, forward only.
LossBreakdown objective(const ModelParams& student, std::span<const TrainingExample> batch,
                        const LossWeights& weights, const ObjectiveOptions& options);

struct GradientResult {
  ModelParams grads;
  LossBreakdown loss;
};

/// Exact gradient of objective().total by reverse-mode differentiation.
/// Encoder gradients stay zero when the encoder is frozen. Throws
/// RuntimeError naming the tensor if any gradient is non-finite.
GradientResult backward(const ModelParams& student, std::span<const TrainingExample> batch,
                        const LossWeights& weights, const ObjectiveOptions& options, int jobs = 1);

struct TrainConfig {
  int steps = 2000;
  int batch_size = 16;
  int warmup_steps = 50;
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  double max_grad_norm = 1.0;
  std::uint64_t seed = 0;
  bool freeze_encoder = true;
  bool log_ce = true;
  int jobs = 1;

  void validate() const;
};

/// Linear warmup from 0 to peak_lr over warmup_steps, then linear decay to 0
/// at `steps`.
double learning_rate(const TrainConfig& config, int step);

/// Scales `grads` so the global L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(ModelParams& grads, double max_norm);

/// Adam with decoupled weight decay over the canonical tensor list.
class AdamW {
 public:
  AdamW(const ModelParams& params, const TrainConfig& config);

  /// Applies one update with the given learning rate. Encoder tensors are
  /// left untouched when `skip_encoder` is set.
  void step(ModelParams& params, const ModelParams& grads, double lr, bool skip_encoder);

 private:
  TrainConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

struct LossLogRow {
  int step = 0;
  double lr = 0.0;
  LossBreakdown loss;
  double grad_norm = 0.0;
};

struct TrainResult {
  ModelParams model;
  std::vector<LossLogRow> log;
};

/// Trains `student` on the corpus. `teacher` may be null for plain
/// cross-entropy training on the targets. Throws RuntimeError with the step
/// number if the loss becomes non-finite.
TrainResult train(ModelParams student, const ModelParams* teacher, std::span<const TrainingExample> corpus,
                  const TrainConfig& config, const LossWeights& weights);

/// CSV: step,lr,ce,pl,kl,mse,total,grad_norm
std::string loss_log_csv(const std::vector<LossLogRow>& log);

}  // namespace dwtk
