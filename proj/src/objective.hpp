#pragma once

#include "dwtk/losses.hpp"

namespace dwtk::detail {

/// Encoder outputs that stay constant during training and may be computed
/// once per example.
struct CachedEncodings {
  const HiddenStates* student = nullptr;  // only valid with a frozen encoder
  const HiddenStates* teacher = nullptr;
};

/// Per-example objective; accumulates the gradient into `grads` if non-null.
LossBreakdown example_objective(const ModelParams& student, const TrainingExample& example,
                                const LossWeights& weights, const ObjectiveOptions& options,
                                const CachedEncodings& cached, ModelParams* grads);

}  // namespace dwtk::detail
