#include <cmath>
#include <random>

#include "doctest.h"
#include "onsurf/mlp.hpp"
#include "onsurf/model_io.hpp"
#include "onsurf/optimizer.hpp"

using namespace onsurf;

namespace {

MlpArchitecture toy_arch(Activation act = Activation::softplus, double beta = 100.0) {
  MlpArchitecture a;
  a.input_dim = 3;
  a.hidden_dim = 6;
  a.num_layers = 3;
  a.skip_layer = 1;
  a.activation = act;
  a.beta = beta;
  return a;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

MatrixX random_inputs(std::size_t dim, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  MatrixX x(static_cast<Eigen::Index>(dim), n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = u(rng);
  return x;
}

// Loss mean_b |f(x_b)|, written directly from forward values.
LossHeadOutput abs_head(const VectorX& v, const MatrixX&) {
  LossHeadOutput out;
  const double n = static_cast<double>(v.size());
  out.loss = v.array().abs().sum() / n;
  out.d_value = v.array().sign().matrix() / n;
  return out;
}

// Loss mean_b || x_b - f(x_b) * g_b / |g_b| ||^2 with g_b = grad_x f(x_b).
struct ProjectionHead {
  MatrixX x;
  static double value(const MatrixX& x, const VectorX& v, const MatrixX& g) {
    double total = 0.0;
    for (Eigen::Index b = 0; b < v.size(); ++b) {
      const VectorX d = g.col(b) / g.col(b).norm();
      total += (x.col(b) - v[b] * d).squaredNorm();
    }
    return total / static_cast<double>(v.size());
  }
  LossHeadOutput operator()(const VectorX& v, const MatrixX& g) const {
    const double n = static_cast<double>(v.size());
    LossHeadOutput out;
    out.loss = value(x, v, g);
    out.d_value.resize(v.size());
    out.d_input_grad.resize(g.rows(), g.cols());
    for (Eigen::Index b = 0; b < v.size(); ++b) {
      const double norm = g.col(b).norm();
      const VectorX d = g.col(b) / norm;
      const VectorX r = x.col(b) - v[b] * d;
      out.d_value[b] = -2.0 * r.dot(d) / n;
      const VectorX dd = -2.0 * v[b] * r / n;
      out.d_input_grad.col(b) = (dd - d * d.dot(dd)) / norm;
    }
    return out;
  }
};

}  // namespace

TEST_CASE("geometric sphere init approximates a sphere of radius one half") {
  MlpArchitecture a;  // defaults
  const auto model = init_model(a, InitMode::geometric_sphere, 7);
  const std::vector<double> origin{0, 0, 0}, unit_x{1, 0, 0};
  CHECK(std::abs(forward(model, origin) + 0.5) < 0.1);
  CHECK(std::abs(forward(model, unit_x) - 0.5) < 0.1);

  for (const Vec3 dir : {Vec3(1, 2, 3), Vec3(-2, 0.5, 1), Vec3(0, 0, -1)}) {
    const Vec3 x = 2.0 * dir.normalized();
    const VectorX g = grad_input(model, std::vector<double>{x.x(), x.y(), x.z()});
    const double cosine = g.dot(dir.normalized()) / g.norm();
    CHECK(cosine > std::cos(15.0 * M_PI / 180.0));
  }
}

TEST_CASE("init is deterministic in the seed") {
  const auto a = init_model(toy_arch(), InitMode::uniform, 3);
  const auto b = init_model(toy_arch(), InitMode::uniform, 3);
  const auto c = init_model(toy_arch(), InitMode::uniform, 4);
  CHECK(a == b);
  CHECK_FALSE(a == c);
}

TEST_CASE("hand-computed forward pass") {
  MlpArchitecture a = toy_arch(Activation::relu);
  a.hidden_dim = 3;
  auto m = init_model(a, InitMode::uniform, 1);
  // Layer 0: identity. Layer 1 (skip): hidden half plus input half, scaled by 1/sqrt 2.
  m.weights[0] = MatrixX::Identity(3, 3);
  m.biases[0] = VectorX::Zero(3);
  m.weights[1] = MatrixX::Zero(3, 6);
  m.weights[1](0, 0) = 1.0;
  m.weights[1](1, 4) = 1.0;
  m.biases[1] = VectorX::Constant(3, 0.5);
  m.weights[2] = MatrixX::Ones(1, 3);
  m.biases[2] = VectorX::Constant(1, -1.0);
  // x = (1, 2, -3): h0 = relu(x) = (1, 2, 0); skip input = (1,2,0,1,2,-3)/sqrt2;
  // h1 = relu((1/sqrt2 + .5, 2/sqrt2 + .5, .5)); out = sum - 1.
  const double expected = (1.0 / std::sqrt(2.0) + 0.5) + (2.0 / std::sqrt(2.0) + 0.5) + 0.5 - 1.0;
  CHECK(forward(m, std::vector<double>{1, 2, -3}) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("input dimension mismatch is rejected") {
  const auto m = init_model(toy_arch(), InitMode::uniform, 1);
  CHECK_THROWS_AS(forward(m, std::vector<double>{1, 2}), InvalidInput);
  CHECK_THROWS_AS(grad_input(m, std::vector<double>{1, 2, 3, 4}), InvalidInput);
  CHECK_THROWS_AS(forward(m, std::vector<double>{1, NAN, 0}), InvalidInput);
}

TEST_CASE("architecture validation") {
  MlpArchitecture a = toy_arch();
  a.skip_layer = 0;
  CHECK_THROWS_AS(a.validate(), InvalidInput);
  a.skip_layer = 2;
  CHECK_THROWS_AS(a.validate(), InvalidInput);
}

TEST_CASE("grad_input matches central differences") {
  for (auto act : {Activation::softplus, Activation::sine, Activation::relu}) {
    CAPTURE(to_string(act));
    const auto m = init_model(toy_arch(act, 10.0), InitMode::uniform, 11);
    const MatrixX xs = random_inputs(3, 20, 5);
    const double h = 1e-4;
    for (Eigen::Index b = 0; b < xs.cols(); ++b) {
      const VectorX x = xs.col(b);
      const VectorX g = grad_input(m, std::span<const double>(x.data(), 3));
      for (int i = 0; i < 3; ++i) {
        VectorX xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (forward(m, std::span<const double>(xp.data(), 3)) -
                           forward(m, std::span<const double>(xm.data(), 3))) / (2 * h);
        if (act == Activation::relu) {
          // Skip samples within reach of a kink.
          const auto t = forward_tape(m, x, false);
          bool near_kink = false;
          for (const auto& z : t.pre) near_kink |= (z.array().abs() < 1e-3 * 10).any();
          if (near_kink) continue;
        }
        CHECK(rel_err(g[i], fd) < 1e-4);
      }
    }
  }
}

TEST_CASE("constant network has zero input gradient") {
  auto m = init_model(toy_arch(), InitMode::uniform, 2);
  m.weights.back().setZero();
  const VectorX g = grad_input(m, std::vector<double>{0.1, 0.2, 0.3});
  CHECK(g.norm() == 0.0);
}

TEST_CASE("batched and unbatched evaluation agree") {
  MlpArchitecture a;
  a.hidden_dim = 32;
  const auto m = init_model(a, InitMode::geometric_sphere, 9);
  const MatrixX xs = random_inputs(3, 700, 1);
  const VectorX batched = forward(m, xs);
  const MatrixX batched_g = grad_input(m, xs);
  for (Eigen::Index b = 0; b < xs.cols(); b += 37) {
    const VectorX x = xs.col(b);
    CHECK(std::abs(batched[b] - forward(m, std::span<const double>(x.data(), 3))) <= 1e-12);
    CHECK((batched_g.col(b) - grad_input(m, std::span<const double>(x.data(), 3))).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

namespace {

void check_param_grads(const MlpModel& model, const MatrixX& xs, const LossHead& head,
                       const std::function<double(const MlpModel&)>& loss_of) {
  const auto lg = loss_param_grads(model, xs, head);
  const VectorX analytic = flatten(lg.grads);
  VectorX theta = flatten_parameters(model);
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<Eigen::Index> pick(0, theta.size() - 1);
  const double h = 1e-4;
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index i = pick(rng);
    MlpModel mp = model, mm = model;
    VectorX tp = theta, tm = theta;
    tp[i] += h;
    tm[i] -= h;
    assign_parameters(mp, tp);
    assign_parameters(mm, tm);
    const double fd = (loss_of(mp) - loss_of(mm)) / (2 * h);
    CAPTURE(i);
    CAPTURE(analytic[i]);
    CAPTURE(fd);
    CHECK(rel_err(analytic[i], fd) < 1e-3);
  }
}

}  // namespace

TEST_CASE("parameter gradients of |f| match finite differences") {
  const auto m = init_model(toy_arch(Activation::softplus, 10.0), InitMode::geometric_sphere, 21);
  const MatrixX xs = random_inputs(3, 16, 8);
  check_param_grads(m, xs, abs_head, [&](const MlpModel& mm) {
    return forward(mm, xs).array().abs().mean();
  });
}

TEST_CASE("parameter gradients through the input gradient match finite differences") {
  for (auto act : {Activation::softplus, Activation::sine}) {
    CAPTURE(to_string(act));
    const auto m = init_model(toy_arch(act, 10.0), InitMode::uniform, 23);
    const MatrixX xs = random_inputs(3, 16, 9);
    ProjectionHead head{xs};
    check_param_grads(m, xs, head, [&](const MlpModel& mm) {
      return ProjectionHead::value(xs, forward(mm, xs), grad_input(mm, xs));
    });
  }
}

TEST_CASE("second-order path spans multiple chunks and deep skip networks") {
  MlpArchitecture a;
  a.hidden_dim = 8;
  a.num_layers = 5;
  a.skip_layer = 2;
  a.beta = 10.0;
  const auto m = init_model(a, InitMode::geometric_sphere, 31);
  const MatrixX xs = random_inputs(3, static_cast<Eigen::Index>(kBatchChunk) + 77, 10);
  ProjectionHead head{xs};
  check_param_grads(m, xs, head, [&](const MlpModel& mm) {
    return ProjectionHead::value(xs, forward(mm, xs), grad_input(mm, xs));
  });
}

TEST_CASE("zero loss gives zero gradients") {
  const auto m = init_model(toy_arch(), InitMode::uniform, 2);
  const MatrixX xs = random_inputs(3, 5, 1);
  const auto lg = loss_param_grads(m, xs, [](const VectorX& v, const MatrixX& g) {
    return LossHeadOutput{0.0, VectorX::Zero(v.size()), MatrixX::Zero(g.rows(), g.cols())};
  });
  CHECK(lg.loss == 0.0);
  CHECK(lg.grads.squared_norm() == 0.0);
}

TEST_CASE("malformed loss head output is a contract violation") {
  const auto m = init_model(toy_arch(), InitMode::uniform, 2);
  const MatrixX xs = random_inputs(3, 5, 1);
  CHECK_THROWS_AS(loss_param_grads(m, xs, [](const VectorX&, const MatrixX&) {
                    return LossHeadOutput{0.0, VectorX::Zero(2), MatrixX()};
                  }),
                  ContractViolation);
  CHECK_THROWS_AS(loss_param_grads(m, xs, [](const VectorX& v, const MatrixX&) {
                    return LossHeadOutput{NAN, VectorX::Zero(v.size()), MatrixX()};
                  }),
                  ContractViolation);
  CHECK_THROWS_AS(loss_param_grads(m, xs, [](const VectorX& v, const MatrixX&) {
                    return LossHeadOutput{0.0, VectorX::Zero(v.size()), MatrixX::Zero(2, 2)};
                  }),
                  ContractViolation);
}

TEST_CASE("parameter gradients are deterministic") {
  const auto m = init_model(toy_arch(), InitMode::geometric_sphere, 2);
  const MatrixX xs = random_inputs(3, 1500, 1);
  ProjectionHead head{xs};
  const auto a = loss_param_grads(m, xs, head);
  const auto b = loss_param_grads(m, xs, head);
  CHECK(flatten(a.grads) == flatten(b.grads));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto m = init_model(toy_arch(), InitMode::uniform, 2);
  const auto before = m;
  auto state = OptimizerState::for_model(m, 0.1);
  adam_step(m, MlpGradients::zeros_like(m), state);
  CHECK(m == before);
  CHECK(state.step == 1);
}

TEST_CASE("adam: first step moves by about lr times the gradient sign") {
  auto m = init_model(toy_arch(), InitMode::uniform, 2);
  const VectorX before = flatten_parameters(m);
  auto grads = MlpGradients::zeros_like(m);
  grads.biases.back()[0] = 1.0;
  grads.weights[0](0, 0) = -3.0;
  auto state = OptimizerState::for_model(m, 0.1);
  adam_step(m, grads, state);
  CHECK(m.biases.back()[0] - before.tail(1)[0] == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(m.weights[0](0, 0) - before[0] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("adam: shape mismatch is rejected") {
  auto m = init_model(toy_arch(), InitMode::uniform, 2);
  auto state = OptimizerState::for_model(m, 0.1);
  auto grads = MlpGradients::zeros_like(m);
  grads.weights[0].resize(1, 1);
  CHECK_THROWS_AS(adam_step(m, grads, state), InvalidInput);
}

TEST_CASE("adam trajectories are reproducible") {
  auto run = [] {
    auto m = init_model(toy_arch(), InitMode::geometric_sphere, 5);
    auto state = OptimizerState::for_model(m, 1e-2);
    const MatrixX xs = random_inputs(3, 64, 3);
    for (int i = 0; i < 10; ++i) adam_step(m, loss_param_grads(m, xs, abs_head).grads, state);
    return m;
  };
  CHECK(run() == run());
}

TEST_CASE("cosine learning rate schedule") {
  CHECK(cosine_learning_rate(1.0, 0, 100) == doctest::Approx(1.0));
  CHECK(cosine_learning_rate(1.0, 50, 100) == doctest::Approx(0.5));
  CHECK(cosine_learning_rate(1.0, 100, 100, 0.1) == doctest::Approx(0.1));
}

TEST_CASE("model file round trip is bit exact") {
  const auto m = init_model(toy_arch(Activation::sine), InitMode::uniform, 42);
  const nlohmann::json meta = {{"seed", 42}, {"config_hash", "abc"}};
  const auto bytes = serialize_model(m, meta);
  const auto loaded = deserialize_model(bytes);
  CHECK(loaded.model == m);
  CHECK(loaded.metadata == meta);
}

TEST_CASE("corrupt model files are rejected with offsets") {
  const auto m = init_model(toy_arch(), InitMode::uniform, 42);
  auto bytes = serialize_model(m, nlohmann::json::object());

  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_model(truncated), FormatError);

  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  try {
    deserialize_model(bad_magic);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() == 1);
  }

  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_model(bad_version), VersionError);
}
