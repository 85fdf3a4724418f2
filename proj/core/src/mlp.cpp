#include "onsurf/mlp.hpp"

#include <cmath>
#include <Eigen/Cholesky>
#include <numbers>
#include <random>

namespace onsurf {
namespace {

const double kInvSqrt2 = 1.0 / std::numbers::sqrt2;
constexpr double kInputGain = 4.0;

void activate(const MlpArchitecture& arch, const MatrixX& z, MatrixX& a, MatrixX& slope) {
  switch (arch.activation) {
    case Activation::softplus: {
      const double beta = arch.beta;
      const Eigen::ArrayXXd bz = beta * z.array();
      const Eigen::ArrayXXd e = (-bz.abs()).exp();
      a = ((bz.max(0.0) + e.log1p()) / beta).matrix();
      slope = (bz >= 0.0).select(1.0 / (1.0 + e), e / (1.0 + e)).matrix();
      break;
    }
    case Activation::sine:
      a = z.array().sin().matrix();
      slope = z.array().cos().matrix();
      break;
    case Activation::relu:
      a = z.cwiseMax(0.0);
      slope = (z.array() > 0.0).cast<double>().matrix();
      break;
  }
}

// Second derivative of the activation, expressed through its value and slope.
Eigen::ArrayXXd curvature(const MlpArchitecture& arch, const MatrixX& a, const MatrixX& slope) {
  switch (arch.activation) {
    case Activation::softplus: return arch.beta * slope.array() * (1.0 - slope.array());
    case Activation::sine: return -a.array();
    case Activation::relu: return Eigen::ArrayXXd::Zero(a.rows(), a.cols());
  }
  return Eigen::ArrayXXd::Zero(a.rows(), a.cols());
}

// Input matrix of hidden layer l given the previous activation.
const MatrixX& layer_input(const MlpArchitecture& arch, std::size_t l, const MatrixX& inputs,
                           const std::vector<MatrixX>& post, MatrixX& scratch) {
  if (l == 0) return inputs;
  if (l != arch.skip_layer) return post[l - 1];
  scratch.resize(static_cast<Eigen::Index>(arch.hidden_dim + arch.input_dim), inputs.cols());
  scratch.topRows(static_cast<Eigen::Index>(arch.hidden_dim)) = kInvSqrt2 * post[l - 1];
  scratch.bottomRows(static_cast<Eigen::Index>(arch.input_dim)) = kInvSqrt2 * inputs;
  return scratch;
}

// Scalar output layer: a column-wise reduction whose order does not depend on
// the batch size or a column's position in it.
VectorX output_layer(const MlpModel& model, const MatrixX& last_hidden) {
  const Eigen::ArrayXd w = model.weights.back().row(0).transpose().array();
  VectorX out = (last_hidden.array().colwise() * w).colwise().sum().transpose().matrix();
  out.array() += model.biases.back()[0];
  return out;
}

// Smooth activations leave a positive residual near the kink that the
// sphere construction assumes, largest at the origin. Refit the output layer
// by ridge least squares to |x| - r on random points, pulled toward the
// constructed weights.
void refit_output_layer(MlpModel& model, double radius, std::mt19937_64& rng) {
  if (model.arch.input_dim != 3) return;
  constexpr Eigen::Index kSamples = 4096;
  constexpr double kExtent = 1.5;
  std::uniform_real_distribution<double> u(-kExtent, kExtent);
  MatrixX x(3, kSamples);
  x.col(0).setZero();
  for (Eigen::Index j = 1; j < kSamples; ++j) {
    // A quarter of the samples concentrate near the origin.
    const double scale = j % 4 == 0 ? 0.25 : 1.0;
    for (int i = 0; i < 3; ++i) x(i, j) = scale * u(rng);
  }

  const std::size_t hidden_layers = model.arch.num_layers - 1;
  std::vector<MatrixX> post(hidden_layers);
  MatrixX pre, slope, scratch;
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    const MatrixX& in = layer_input(model.arch, l, x, post, scratch);
    pre.noalias() = model.weights[l] * in;
    pre.colwise() += model.biases[l];
    activate(model.arch, pre, post[l], slope);
  }
  const auto h = post.back().rows();
  MatrixX features(h + 1, kSamples);
  features.topRows(h) = post.back();
  features.row(h).setOnes();
  const VectorX target = x.colwise().norm().transpose().array() - radius;

  VectorX prior(h + 1);
  prior.head(h) = model.weights.back().row(0).transpose();
  prior[h] = model.biases.back()[0];
  MatrixX normal = features * features.transpose();
  const double ridge = 1e-4 * normal.trace() / static_cast<double>(h + 1);
  normal.diagonal().array() += ridge;
  const VectorX rhs = features * target + ridge * prior;
  const VectorX solution = normal.ldlt().solve(rhs);
  if (!solution.allFinite()) return;
  model.weights.back().row(0) = solution.head(h).transpose();
  model.biases.back()[0] = solution[h];
}

void check_input(const MlpModel& model, const MatrixX& inputs) {
  if (static_cast<std::size_t>(inputs.rows()) != model.arch.input_dim)
    throw InvalidInput("mlp: input has " + std::to_string(inputs.rows()) + " rows, expected " +
                       std::to_string(model.arch.input_dim));
  if (!inputs.allFinite()) throw InvalidInput("mlp: non-finite input");
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::softplus: return "softplus";
    case Activation::sine: return "sine";
    case Activation::relu: return "relu";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  for (auto a : {Activation::softplus, Activation::sine, Activation::relu}) {
    if (to_string(a) == name) return a;
  }
  throw InvalidInput("unknown activation '" + name + "'");
}

void MlpArchitecture::validate() const {
  if (input_dim == 0 || hidden_dim == 0) throw InvalidInput("mlp: dimensions must be positive");
  if (num_layers < 2) throw InvalidInput("mlp: need at least two linear layers");
  if (!(skip_layer > 0 && skip_layer < num_layers - 1))
    throw InvalidInput("mlp: skip layer " + std::to_string(skip_layer) + " must be a hidden layer in (0, " +
                       std::to_string(num_layers - 1) + ")");
  if (activation == Activation::softplus && !(beta > 0.0)) throw InvalidInput("mlp: softplus beta must be positive");
}

std::size_t MlpArchitecture::layer_input_dim(std::size_t layer) const {
  if (layer == 0) return input_dim;
  return layer == skip_layer ? hidden_dim + input_dim : hidden_dim;
}

std::size_t MlpArchitecture::layer_output_dim(std::size_t layer) const {
  return layer + 1 == num_layers ? 1 : hidden_dim;
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

bool MlpModel::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

bool operator==(const MlpModel& a, const MlpModel& b) {
  if (!(a.arch == b.arch) || a.init_seed != b.init_seed || a.weights.size() != b.weights.size()) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l].rows() != b.weights[l].rows() || a.weights[l].cols() != b.weights[l].cols()) return false;
    if (a.weights[l] != b.weights[l] || a.biases[l] != b.biases[l]) return false;
  }
  return true;
}

MlpModel init_model(const MlpArchitecture& arch, InitMode mode, std::uint64_t seed, double sphere_radius) {
  arch.validate();
  MlpModel model;
  model.arch = arch;
  model.init_seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < arch.num_layers; ++l) {
    const auto in = static_cast<Eigen::Index>(arch.layer_input_dim(l));
    const auto out = static_cast<Eigen::Index>(arch.layer_output_dim(l));
    MatrixX w(out, in);
    VectorX b = VectorX::Zero(out);
    const bool last = l + 1 == arch.num_layers;
    if (mode == InitMode::geometric_sphere) {
      std::normal_distribution<double> dist =
          last ? std::normal_distribution<double>(std::sqrt(std::numbers::pi / static_cast<double>(in)), 1e-5)
               : std::normal_distribution<double>(0.0, std::sqrt(2.0) / std::sqrt(static_cast<double>(out)));
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
      if (last) b[0] = -sphere_radius;
    } else {
      const double bound = std::sqrt(6.0 / static_cast<double>(in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  if (mode == InitMode::geometric_sphere) {
    // Sharpen the features near the origin: scale every weight that reads the
    // raw input by kInputGain and undo it in the output layer. For a ReLU
    // network this is an exact reparameterization.
    model.weights[0] *= kInputGain;
    model.weights[arch.skip_layer].rightCols(static_cast<Eigen::Index>(arch.input_dim)) *= kInputGain;
    model.weights.back() /= kInputGain;
    refit_output_layer(model, sphere_radius, rng);
  }
  return model;
}

MlpGradients MlpGradients::zeros_like(const MlpModel& model) {
  MlpGradients g;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    g.weights.push_back(MatrixX::Zero(model.weights[l].rows(), model.weights[l].cols()));
    g.biases.push_back(VectorX::Zero(model.biases[l].size()));
  }
  return g;
}

MlpGradients& MlpGradients::operator+=(const MlpGradients& other) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  return *this;
}

MlpGradients& MlpGradients::operator*=(double s) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= s;
    biases[l] *= s;
  }
  return *this;
}

double MlpGradients::squared_norm() const {
  double n = 0.0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].squaredNorm() + biases[l].squaredNorm();
  return n;
}

VectorX flatten_parameters(const MlpModel& model) {
  VectorX flat(static_cast<Eigen::Index>(model.parameter_count()));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    flat.segment(k, model.weights[l].size()) = model.weights[l].reshaped();
    k += model.weights[l].size();
    flat.segment(k, model.biases[l].size()) = model.biases[l];
    k += model.biases[l].size();
  }
  return flat;
}

void assign_parameters(MlpModel& model, const VectorX& flat) {
  if (static_cast<std::size_t>(flat.size()) != model.parameter_count())
    throw InvalidInput("assign_parameters: size mismatch");
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    model.weights[l].reshaped() = flat.segment(k, model.weights[l].size());
    k += model.weights[l].size();
    model.biases[l] = flat.segment(k, model.biases[l].size());
    k += model.biases[l].size();
  }
}

VectorX flatten(const MlpGradients& grads) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) n += grads.weights[l].size() + grads.biases[l].size();
  VectorX flat(n);
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < grads.weights.size(); ++l) {
    flat.segment(k, grads.weights[l].size()) = grads.weights[l].reshaped();
    k += grads.weights[l].size();
    flat.segment(k, grads.biases[l].size()) = grads.biases[l];
    k += grads.biases[l].size();
  }
  return flat;
}

ForwardTape forward_tape(const MlpModel& model, const MatrixX& inputs, bool with_input_grad) {
  check_input(model, inputs);
  const auto& arch = model.arch;
  const std::size_t hidden_layers = arch.num_layers - 1;
  ForwardTape tape;
  tape.inputs = inputs;
  tape.pre.resize(hidden_layers);
  tape.post.resize(hidden_layers);
  tape.slope.resize(hidden_layers);
  MatrixX scratch;
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    const MatrixX& in = layer_input(arch, l, tape.inputs, tape.post, scratch);
    tape.pre[l].noalias() = model.weights[l] * in;
    tape.pre[l].colwise() += model.biases[l];
    activate(arch, tape.pre[l], tape.post[l], tape.slope[l]);
  }
  tape.output = output_layer(model, tape.post.back());

  if (with_input_grad) {
    const auto batch = inputs.cols();
    const auto hidden = static_cast<Eigen::Index>(arch.hidden_dim);
    const auto in_dim = static_cast<Eigen::Index>(arch.input_dim);
    MatrixX upstream = model.weights.back().row(0).transpose() * Eigen::RowVectorXd::Ones(batch);
    tape.input_grad = MatrixX::Zero(in_dim, batch);
    MatrixX g;
    for (std::size_t l = hidden_layers; l-- > 0;) {
      const MatrixX v = upstream.cwiseProduct(tape.slope[l]);
      g.noalias() = model.weights[l].transpose() * v;
      if (l == 0) {
        tape.input_grad += g;
      } else if (l == arch.skip_layer) {
        upstream = kInvSqrt2 * g.topRows(hidden);
        tape.input_grad += kInvSqrt2 * g.bottomRows(in_dim);
      } else {
        upstream.swap(g);
      }
    }
  }
  return tape;
}

MlpGradients backprop(const MlpModel& model, const ForwardTape& tape, const VectorX& d_value,
                      const MatrixX& d_input_grad) {
  const auto& arch = model.arch;
  const std::size_t hidden_layers = arch.num_layers - 1;
  const auto batch = tape.inputs.cols();
  const auto hidden = static_cast<Eigen::Index>(arch.hidden_dim);
  const bool second_order = d_input_grad.size() > 0;
  if (d_value.size() != batch) throw ContractViolation("backprop: d_value has wrong length");
  if (second_order && (d_input_grad.rows() != tape.inputs.rows() || d_input_grad.cols() != batch))
    throw ContractViolation("backprop: d_input_grad has wrong shape");

  // Tangent pass: directional derivative of every activation along d_input_grad.
  std::vector<MatrixX> tangent_pre, tangent_post;
  MatrixX scratch, tangent_scratch;
  if (second_order) {
    tangent_pre.resize(hidden_layers);
    tangent_post.resize(hidden_layers);
    for (std::size_t l = 0; l < hidden_layers; ++l) {
      const MatrixX& tin = layer_input(arch, l, d_input_grad, tangent_post, tangent_scratch);
      tangent_pre[l].noalias() = model.weights[l] * tin;
      tangent_post[l] = tangent_pre[l].cwiseProduct(tape.slope[l]);
    }
  }

  MlpGradients grads = MlpGradients::zeros_like(model);
  const MatrixX& last_hidden = tape.post.back();
  const VectorX w_out = model.weights.back().row(0).transpose();
  {
    VectorX gw = last_hidden * d_value;
    if (second_order) gw += tangent_post.back().rowwise().sum();
    grads.weights.back().row(0) = gw.transpose();
    grads.biases.back()[0] = d_value.sum();
  }
  MatrixX adj = w_out * d_value.transpose();
  MatrixX tangent_adj;
  if (second_order) tangent_adj = w_out * Eigen::RowVectorXd::Ones(batch);

  MatrixX zbar, tzbar, in_adj;
  for (std::size_t l = hidden_layers; l-- > 0;) {
    zbar = adj.cwiseProduct(tape.slope[l]);
    if (second_order) {
      zbar.array() += tangent_adj.array() * curvature(arch, tape.post[l], tape.slope[l]) * tangent_pre[l].array();
      tzbar = tangent_adj.cwiseProduct(tape.slope[l]);
    }
    const MatrixX& in = layer_input(arch, l, tape.inputs, tape.post, scratch);
    grads.weights[l].noalias() = zbar * in.transpose();
    if (second_order) {
      const MatrixX& tin = layer_input(arch, l, d_input_grad, tangent_post, tangent_scratch);
      grads.weights[l].noalias() += tzbar * tin.transpose();
    }
    grads.biases[l] = zbar.rowwise().sum();
    if (l == 0) break;
    in_adj.noalias() = model.weights[l].transpose() * zbar;
    if (l == arch.skip_layer) adj = kInvSqrt2 * in_adj.topRows(hidden);
    else adj.swap(in_adj);
    if (second_order) {
      in_adj.noalias() = model.weights[l].transpose() * tzbar;
      if (l == arch.skip_layer) tangent_adj = kInvSqrt2 * in_adj.topRows(hidden);
      else tangent_adj.swap(in_adj);
    }
  }
  return grads;
}

double forward(const MlpModel& model, std::span<const double> input) {
  const MatrixX x = Eigen::Map<const VectorX>(input.data(), static_cast<Eigen::Index>(input.size()));
  return forward(model, x)[0];
}

VectorX forward(const MlpModel& model, const MatrixX& inputs) {
  check_input(model, inputs);
  const auto& arch = model.arch;
  const std::size_t hidden_layers = arch.num_layers - 1;
  std::vector<MatrixX> post(hidden_layers);
  MatrixX pre, slope, scratch;
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    const MatrixX& in = layer_input(arch, l, inputs, post, scratch);
    pre.noalias() = model.weights[l] * in;
    pre.colwise() += model.biases[l];
    activate(arch, pre, post[l], slope);
    if (l >= 1) post[l - 1].resize(0, 0);
  }
  return output_layer(model, post.back());
}

VectorX grad_input(const MlpModel& model, std::span<const double> input) {
  const MatrixX x = Eigen::Map<const VectorX>(input.data(), static_cast<Eigen::Index>(input.size()));
  return grad_input(model, x).col(0);
}

MatrixX grad_input(const MlpModel& model, const MatrixX& inputs) {
  return forward_tape(model, inputs, true).input_grad;
}

LossWithGrads loss_param_grads(const MlpModel& model, const MatrixX& inputs, const LossHead& head,
                               bool with_input_grad) {
  check_input(model, inputs);
  const auto batch = inputs.cols();
  const auto chunk = static_cast<Eigen::Index>(kBatchChunk);
  const auto chunks = static_cast<std::size_t>((batch + chunk - 1) / chunk);

  std::vector<ForwardTape> tapes(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const auto begin = static_cast<Eigen::Index>(c) * chunk;
    const auto cols = std::min(chunk, batch - begin);
    tapes[c] = forward_tape(model, inputs.middleCols(begin, cols), with_input_grad);
  });

  VectorX values(batch);
  MatrixX input_grads(with_input_grad ? inputs.rows() : 0, with_input_grad ? batch : 0);
  for (std::size_t c = 0; c < chunks; ++c) {
    const auto begin = static_cast<Eigen::Index>(c) * chunk;
    values.segment(begin, tapes[c].output.size()) = tapes[c].output;
    if (with_input_grad) input_grads.middleCols(begin, tapes[c].input_grad.cols()) = tapes[c].input_grad;
  }

  const LossHeadOutput partials = head(values, input_grads);
  if (partials.d_value.size() != batch)
    throw ContractViolation("loss head returned " + std::to_string(partials.d_value.size()) +
                            " value partials for a batch of " + std::to_string(batch));
  const bool second_order = partials.d_input_grad.size() > 0;
  if (second_order && !with_input_grad)
    throw ContractViolation("loss head returned input-gradient partials but input gradients were not requested");
  if (second_order && (partials.d_input_grad.rows() != inputs.rows() || partials.d_input_grad.cols() != batch))
    throw ContractViolation("loss head returned input-gradient partials of the wrong shape");
  if (!std::isfinite(partials.loss) || !partials.d_value.allFinite() ||
      (second_order && !partials.d_input_grad.allFinite()))
    throw ContractViolation("loss head returned non-finite partials");

  std::vector<MlpGradients> chunk_grads(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const auto begin = static_cast<Eigen::Index>(c) * chunk;
    const auto cols = tapes[c].inputs.cols();
    const MatrixX dg = second_order ? MatrixX(partials.d_input_grad.middleCols(begin, cols)) : MatrixX();
    chunk_grads[c] = backprop(model, tapes[c], partials.d_value.segment(begin, cols), dg);
  });

  LossWithGrads result;
  result.loss = partials.loss;
  result.grads = MlpGradients::zeros_like(model);
  for (const auto& g : chunk_grads) result.grads += g;
  return result;
}

}  // namespace onsurf
