#pragma once

#include <cstdint>

#include "onsurf/mlp.hpp"

namespace onsurf {

struct OptimizerState {
  MlpGradients first_moment;
  MlpGradients second_moment;
  std::uint64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static OptimizerState for_model(const MlpModel& model, double learning_rate);
};

// One bias-corrected Adam update of `model` in place. Throws InvalidInput
// when the gradient or moment shapes do not match the model.
void adam_step(MlpModel& model, const MlpGradients& grads, OptimizerState& state);

// Cosine decay from base_lr at step 0 to final_fraction * base_lr at total_steps.
double cosine_learning_rate(double base_lr, std::uint64_t step, std::uint64_t total_steps,
                            double final_fraction = 0.0);

}  // namespace onsurf
