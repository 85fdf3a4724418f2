#include "onsurf/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace onsurf {
namespace {

bool same_shape(const MlpModel& model, const MlpGradients& g) {
  if (g.weights.size() != model.weights.size() || g.biases.size() != model.biases.size()) return false;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    if (g.weights[l].rows() != model.weights[l].rows() || g.weights[l].cols() != model.weights[l].cols() ||
        g.biases[l].size() != model.biases[l].size())
      return false;
  }
  return true;
}

template <class Param, class Grad>
void update(Param& param, const Grad& grad, Param& m, Param& v, const OptimizerState& s, double c1, double c2) {
  m = s.beta1 * m + (1.0 - s.beta1) * grad;
  v = s.beta2 * v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  param.array() -= s.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + s.epsilon);
}

}  // namespace

OptimizerState OptimizerState::for_model(const MlpModel& model, double learning_rate) {
  OptimizerState s;
  s.first_moment = MlpGradients::zeros_like(model);
  s.second_moment = MlpGradients::zeros_like(model);
  s.learning_rate = learning_rate;
  return s;
}

void adam_step(MlpModel& model, const MlpGradients& grads, OptimizerState& state) {
  if (!same_shape(model, grads)) throw InvalidInput("adam_step: gradient shapes do not match the model");
  if (!same_shape(model, state.first_moment) || !same_shape(model, state.second_moment))
    throw InvalidInput("adam_step: optimizer state does not match the model");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    update(model.weights[l], grads.weights[l], state.first_moment.weights[l], state.second_moment.weights[l], state,
           c1, c2);
    update(model.biases[l], grads.biases[l], state.first_moment.biases[l], state.second_moment.biases[l], state, c1,
           c2);
  }
}

double cosine_learning_rate(double base_lr, std::uint64_t step, std::uint64_t total_steps, double final_fraction) {
  if (total_steps == 0) return base_lr;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  const double floor = final_fraction * base_lr;
  return floor + 0.5 * (base_lr - floor) * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace onsurf
