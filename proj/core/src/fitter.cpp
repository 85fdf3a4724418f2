#include "onsurf/fitter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "onsurf/optimizer.hpp"

namespace onsurf {
namespace {

double sign(double x) { return (x > 0.0) - (x < 0.0); }

constexpr double kMinGradNorm = 1e-12;

}  // namespace

LearnedSurfacePrior::LearnedSurfacePrior(const PriorModel& prior, const PointCloud& cloud)
    : prior_(prior), index_(cloud) {
  prior_.validate();
  if (cloud.size() < prior_.k)
    throw InvalidInput("cloud has " + std::to_string(cloud.size()) + " points, fewer than the prior's k = " +
                       std::to_string(prior_.k));
}

void LearnedSurfacePrior::evaluate(const MatrixX& points, VectorX& values, MatrixX& gradients) const {
  const auto n = points.cols();
  const auto dim = static_cast<Eigen::Index>(prior_.network.arch.input_dim);
  values.resize(n);
  gradients.resize(3, n);
  const auto chunk = static_cast<Eigen::Index>(kBatchChunk);
  const auto chunks = static_cast<std::size_t>((n + chunk - 1) / chunk);
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * chunk;
    const Eigen::Index cols = std::min(chunk, n - begin);
    std::vector<LocalPatch> patches(static_cast<std::size_t>(cols));
    MatrixX inputs(dim, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Point3 p = points.col(begin + j);
      patches[static_cast<std::size_t>(j)] = extract_patch(index_, p, prior_.k);
      encode_patch(index_, p, patches[static_cast<std::size_t>(j)], prior_.normalization, inputs.col(j).data());
    }
    const ForwardTape tape = forward_tape(prior_.network, inputs, true);
    const double flip = prior_.label_mode == LabelMode::binary ? -1.0 : 1.0;
    for (Eigen::Index j = 0; j < cols; ++j) {
      const Point3 p = points.col(begin + j);
      const double out = tape.output[j];
      values[begin + j] = prior_.label_mode == LabelMode::binary ? 1.0 - out : out;
      gradients.col(begin + j) = flip * encoded_patch_pullback(index_, p, patches[static_cast<std::size_t>(j)],
                                                               prior_.normalization, tape.input_grad.col(j).data());
    }
  });
}

void OracleSurfacePrior::evaluate(const MatrixX& points, VectorX& values, MatrixX& gradients) const {
  values.resize(points.cols());
  gradients.resize(3, points.cols());
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const Point3 p = points.col(j);
    const Vec3 offset = p - shape_.closest_point(p);
    const double d = offset.norm();
    values[j] = d;
    gradients.col(j) = d > 0.0 ? Vec3(offset / d) : Vec3::Zero();
  }
}

void FitConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("fit: lambda must be non-negative");
  if (k == 0) throw ConfigError("fit: k must be positive");
  if (iterations == 0) throw ConfigError("fit: iterations must be positive");
  if (batch_size == 0) throw ConfigError("fit: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("fit: learning_rate must be positive");
  if (!(final_learning_rate >= 0.0 && final_learning_rate <= learning_rate))
    throw ConfigError("fit: final_learning_rate must lie in [0, learning_rate]");
  if (queries_per_point == 0) throw ConfigError("fit: queries_per_point must be positive");
  if (!(sampling.uniform_ratio >= 0.0)) throw ConfigError("fit: uniform_ratio must be non-negative");
  try {
    architecture().validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("fit network: ") + e.what());
  }
}

MlpArchitecture FitConfig::architecture() const {
  MlpArchitecture a;
  a.input_dim = 3;
  a.hidden_dim = hidden_dim;
  a.num_layers = num_layers;
  a.skip_layer = num_layers / 2;
  return a;
}

nlohmann::json FitConfig::to_json() const {
  return {{"lambda", lambda},
          {"k", k},
          {"iterations", iterations},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"final_learning_rate", final_learning_rate},
          {"seed", seed},
          {"detach_direction", detach_direction},
          {"queries_per_point", queries_per_point},
          {"sigma_neighbor", sampling.sigma_neighbor},
          {"uniform_ratio", sampling.uniform_ratio},
          {"bbox_inflation", sampling.bbox_inflation},
          {"hidden_dim", hidden_dim},
          {"num_layers", num_layers}};
}

FitConfig FitConfig::from_json(const nlohmann::json& j) {
  FitConfig c;
  if (!j.is_object()) throw ConfigError("fit config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "k") c.k = value.get<std::size_t>();
      else if (key == "iterations") c.iterations = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "final_learning_rate") c.final_learning_rate = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "detach_direction") c.detach_direction = value.get<bool>();
      else if (key == "queries_per_point") c.queries_per_point = value.get<std::size_t>();
      else if (key == "sigma_neighbor") c.sampling.sigma_neighbor = value.get<std::size_t>();
      else if (key == "uniform_ratio") c.sampling.uniform_ratio = value.get<double>();
      else if (key == "bbox_inflation") c.sampling.bbox_inflation = value.get<double>();
      else if (key == "hidden_dim") c.hidden_dim = value.get<std::size_t>();
      else if (key == "num_layers") c.num_layers = value.get<std::size_t>();
      else throw ConfigError("fit: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("fit: ") + e.what());
  }
  c.validate();
  return c;
}

std::string FitConfig::hash() const { return sha256_hex(to_json().dump()); }

Projection project(const MlpModel& sdf, const Point3& q) {
  const std::vector<double> x{q.x(), q.y(), q.z()};
  const ForwardTape tape = forward_tape(sdf, Eigen::Map<const VectorX>(x.data(), 3), true);
  const Vec3 g = tape.input_grad.col(0);
  const double norm = g.norm();
  if (!(norm > kMinGradNorm)) throw NumericalFailure("project: degenerate gradient at query");
  Projection out;
  out.distance = tape.output[0];
  out.direction = g / norm;
  out.point = q - out.distance * out.direction;
  return out;
}

double regularization_loss(const MlpModel& sdf, const std::vector<Point3>& queries) {
  if (queries.empty()) return 0.0;
  MatrixX x(3, static_cast<Eigen::Index>(queries.size()));
  for (std::size_t i = 0; i < queries.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = queries[i];
  return forward(sdf, x).cwiseAbs().mean();
}

double on_surface_loss(const SurfacePrior& prior, const MlpModel& sdf, const std::vector<Point3>& queries) {
  if (queries.empty()) return 0.0;
  MatrixX x(3, static_cast<Eigen::Index>(queries.size()));
  for (std::size_t i = 0; i < queries.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = queries[i];
  LossRecord parts;
  fit_loss_grads(sdf, prior, x, 0.0, true, &parts);
  return parts.on_surface;
}

LossWithGrads fit_loss_grads(const MlpModel& sdf, const SurfacePrior& prior, const MatrixX& queries, double lambda,
                             bool detach_direction, LossRecord* parts, std::size_t* degenerate) {
  const auto head = [&](const VectorX& s, const MatrixX& g) {
    const auto n = s.size();
    std::vector<Eigen::Index> valid;
    valid.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index b = 0; b < n; ++b) {
      if (g.col(b).norm() > kMinGradNorm) valid.push_back(b);
    }
    if (degenerate) *degenerate += static_cast<std::size_t>(n) - valid.size();

    LossHeadOutput out;
    out.d_value = VectorX::Zero(n);
    if (!detach_direction) out.d_input_grad = MatrixX::Zero(3, n);
    if (valid.empty()) return out;

    const auto m = static_cast<Eigen::Index>(valid.size());
    MatrixX proj(3, m), dirs(3, m);
    VectorX norms(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index b = valid[static_cast<std::size_t>(i)];
      norms[i] = g.col(b).norm();
      dirs.col(i) = g.col(b) / norms[i];
      proj.col(i) = queries.col(b) - s[b] * dirs.col(i);
    }
    VectorX pv;
    MatrixX pg;
    prior.evaluate(proj, pv, pg);

    const double inv = 1.0 / static_cast<double>(m);
    double on = 0.0, reg = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::Index b = valid[static_cast<std::size_t>(i)];
      on += std::abs(pv[i]);
      reg += std::abs(s[b]);
      const Vec3 dp = inv * sign(pv[i]) * pg.col(i);
      const Vec3 d = dirs.col(i);
      out.d_value[b] = -dp.dot(d) + inv * lambda * sign(s[b]);
      if (!detach_direction) {
        const Vec3 dd = -s[b] * dp;
        out.d_input_grad.col(b) = (dd - d * d.dot(dd)) / norms[i];
      }
    }
    on *= inv;
    reg *= inv;
    out.loss = on + lambda * reg;
    if (parts) *parts = {out.loss, on, reg};
    return out;
  };
  return loss_param_grads(sdf, queries, head, true);
}

FitResult fit_sdf(const PointCloud& cloud, const SurfacePrior& prior, const FitConfig& cfg,
                  const FitProgress& progress) {
  cfg.validate();
  cloud.require_valid();
  const auto start = std::chrono::steady_clock::now();

  const std::vector<Point3> queries =
      sample_queries(cloud, cfg.queries_per_point, derive_seed(cfg.seed, "fit/queries"), cfg.sampling);
  FitResult result;
  result.config_hash = cfg.hash();
  result.sdf = init_model(cfg.architecture(), InitMode::geometric_sphere, derive_seed(cfg.seed, "fit/init"));
  auto state = OptimizerState::for_model(result.sdf, cfg.learning_rate);

  std::mt19937_64 rng(derive_seed(cfg.seed, "fit/shuffle"));
  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t batch = std::min(cfg.batch_size, queries.size());
  std::size_t cursor = 0;
  MatrixX x(3, static_cast<Eigen::Index>(batch));
  const double floor_fraction = cfg.final_learning_rate / cfg.learning_rate;

  result.loss_history.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    if (cursor + batch > order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    for (std::size_t j = 0; j < batch; ++j) x.col(static_cast<Eigen::Index>(j)) = queries[order[cursor + j]];
    cursor += batch;

    LossRecord parts;
    LossWithGrads lg;
    try {
      lg = fit_loss_grads(result.sdf, prior, x, cfg.lambda, cfg.detach_direction, &parts,
                          &result.degenerate_queries);
    } catch (const ContractViolation& e) {
      throw NumericalFailure("fit: non-finite loss at iteration " + std::to_string(it) + " (seed " +
                             std::to_string(cfg.seed) + ", parameter norm " +
                             std::to_string(flatten_parameters(result.sdf).norm()) + "): " + e.what());
    }
    if (!std::isfinite(lg.loss) || !std::isfinite(lg.grads.squared_norm()))
      throw NumericalFailure("fit: non-finite loss at iteration " + std::to_string(it) + " (seed " +
                             std::to_string(cfg.seed) + ", parameter norm " +
                             std::to_string(flatten_parameters(result.sdf).norm()) + ")");
    state.learning_rate = cosine_learning_rate(cfg.learning_rate, it, cfg.iterations, floor_fraction);
    adam_step(result.sdf, lg.grads, state);
    result.loss_history.push_back(parts);
    if (progress) progress(it, parts);
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace onsurf
