#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "onsurf/common.hpp"

namespace onsurf {

enum class Activation : std::uint32_t { softplus = 0, sine = 1, relu = 2 };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Fully connected network with a scalar output. `num_layers` counts linear
// layers: layer 0 maps the input to hidden_dim, the last layer maps hidden_dim
// to 1. The input of layer `skip_layer` is the previous activation with the
// raw input appended, scaled by 1/sqrt(2).
struct MlpArchitecture {
  std::size_t input_dim = 3;
  std::size_t hidden_dim = 256;
  std::size_t num_layers = 8;
  std::size_t skip_layer = 4;
  Activation activation = Activation::softplus;
  double beta = 100.0;  // softplus sharpness

  void validate() const;
  std::size_t layer_input_dim(std::size_t layer) const;
  std::size_t layer_output_dim(std::size_t layer) const;
  friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

struct MlpModel {
  MlpArchitecture arch;
  std::vector<MatrixX> weights;  // layer l: output_dim x input_dim
  std::vector<VectorX> biases;
  std::uint64_t init_seed = 0;

  std::size_t parameter_count() const;
  bool all_finite() const;
  friend bool operator==(const MlpModel& a, const MlpModel& b);
};

enum class InitMode { geometric_sphere, uniform };

// geometric_sphere starts the network close to the signed distance of a
// sphere of radius `sphere_radius`; uniform is He-uniform with zero biases.
MlpModel init_model(const MlpArchitecture& arch, InitMode mode, std::uint64_t seed,
                    double sphere_radius = 0.5);

// Same layout as MlpModel's parameters.
struct MlpGradients {
  std::vector<MatrixX> weights;
  std::vector<VectorX> biases;

  static MlpGradients zeros_like(const MlpModel& model);
  MlpGradients& operator+=(const MlpGradients& other);
  MlpGradients& operator*=(double s);
  double squared_norm() const;
};

// Parameters flattened layer by layer (weights column-major, then biases).
VectorX flatten_parameters(const MlpModel& model);
void assign_parameters(MlpModel& model, const VectorX& flat);
VectorX flatten(const MlpGradients& grads);

// Inputs are column-major batches: one column per sample.
double forward(const MlpModel& model, std::span<const double> input);
VectorX forward(const MlpModel& model, const MatrixX& inputs);
VectorX grad_input(const MlpModel& model, std::span<const double> input);
MatrixX grad_input(const MlpModel& model, const MatrixX& inputs);

// Activations retained from a forward pass (and optionally the input
// gradient pass) for later differentiation.
struct ForwardTape {
  MatrixX inputs;
  std::vector<MatrixX> pre;    // hidden pre-activations
  std::vector<MatrixX> post;   // hidden activations
  std::vector<MatrixX> slope;  // activation derivative at pre
  VectorX output;
  MatrixX input_grad;          // empty unless requested
};

ForwardTape forward_tape(const MlpModel& model, const MatrixX& inputs, bool with_input_grad);

// Gradient of  sum_b d_value[b] * f(x_b) + d_input_grad[:, b] . grad_x f(x_b)
// with respect to all parameters. This is the exact parameter gradient of
// any loss whose dependence on the network is through f(x_b) and
// grad_x f(x_b), given the loss partials. An empty d_input_grad selects the
// first-order path.
MlpGradients backprop(const MlpModel& model, const ForwardTape& tape, const VectorX& d_value,
                      const MatrixX& d_input_grad);

// Partials of a batch loss with respect to each sample's value and input
// gradient. d_input_grad may be left empty when the loss ignores gradients.
struct LossHeadOutput {
  double loss = 0.0;
  VectorX d_value;
  MatrixX d_input_grad;
};

using LossHead = std::function<LossHeadOutput(const VectorX& values, const MatrixX& input_grads)>;

struct LossWithGrads {
  double loss = 0.0;
  MlpGradients grads;
};

// Evaluates values and input gradients for all inputs, hands them to `head`,
// and returns the parameter gradients of the head's loss. Work is split into
// fixed-size column chunks whose gradients are summed in chunk order, so the
// result is independent of the worker count. Throws ContractViolation when the
// head returns partials of the wrong shape or non-finite partials.
// With with_input_grad = false the head sees an empty gradient matrix and must
// not return input-gradient partials.
LossWithGrads loss_param_grads(const MlpModel& model, const MatrixX& inputs, const LossHead& head,
                               bool with_input_grad = true);

inline constexpr std::size_t kBatchChunk = 512;

}  // namespace onsurf
