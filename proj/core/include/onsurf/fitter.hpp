#pragma once

#include <functional>
#include <memory>
#include <nlohmann/json.hpp>

#include "onsurf/mlp.hpp"
#include "onsurf/prior.hpp"
#include "onsurf/sampling.hpp"
#include "onsurf/shape_oracle.hpp"

namespace onsurf {

// Scores how far points are from the surface, with gradients w.r.t. the points.
class SurfacePrior {
 public:
  virtual ~SurfacePrior() = default;
  // points: 3 x n. values: n. gradients: 3 x n.
  virtual void evaluate(const MatrixX& points, VectorX& values, MatrixX& gradients) const = 0;
  virtual std::string name() const = 0;
};

// Frozen learned prior over the patches of one sparse cloud. Binary priors
// predict an on-surface score, so the value reported here is 1 - score.
class LearnedSurfacePrior final : public SurfacePrior {
 public:
  LearnedSurfacePrior(const PriorModel& prior, const PointCloud& cloud);
  void evaluate(const MatrixX& points, VectorX& values, MatrixX& gradients) const override;
  std::string name() const override { return "learned/" + to_string(prior_.label_mode); }
  const KnnIndex& index() const { return index_; }

 private:
  const PriorModel& prior_;
  KnnIndex index_;
};

// Exact unsigned distance to an analytic shape, substituted for the learned
// prior to test the fitter in isolation.
class OracleSurfacePrior final : public SurfacePrior {
 public:
  explicit OracleSurfacePrior(ShapeOracle shape) : shape_(std::move(shape)) {}
  void evaluate(const MatrixX& points, VectorX& values, MatrixX& gradients) const override;
  std::string name() const override { return "oracle"; }

 private:
  ShapeOracle shape_;
};

struct FitConfig {
  double lambda = 0.4;
  std::size_t k = 50;
  std::size_t iterations = 2000;
  std::size_t batch_size = 500;
  double learning_rate = 3e-3;
  double final_learning_rate = 3e-5;
  std::uint64_t seed = 0;
  bool detach_direction = false;
  std::size_t queries_per_point = 25;
  QuerySamplingOptions sampling;
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 6;

  void validate() const;
  MlpArchitecture architecture() const;
  nlohmann::json to_json() const;
  static FitConfig from_json(const nlohmann::json& j);  // unknown keys rejected
  std::string hash() const;
};

struct LossRecord {
  double total = 0.0;
  double on_surface = 0.0;
  double regularization = 0.0;
};

struct FitResult {
  MlpModel sdf;
  std::vector<LossRecord> loss_history;
  std::string config_hash;
  double wall_seconds = 0.0;
  std::size_t degenerate_queries = 0;
};

struct Projection {
  Point3 point;
  double distance = 0.0;  // signed value at the query
  Vec3 direction;         // unit gradient at the query
};

// Moves q along the normalized gradient by the predicted signed distance.
// Throws NumericalFailure when the gradient norm is at most 1e-12.
Projection project(const MlpModel& sdf, const Point3& q);

double on_surface_loss(const SurfacePrior& prior, const MlpModel& sdf, const std::vector<Point3>& queries);
double regularization_loss(const MlpModel& sdf, const std::vector<Point3>& queries);

// Loss and parameter gradients of one batch (columns of `queries`).
// Queries with a degenerate gradient are left out of the mean and counted.
LossWithGrads fit_loss_grads(const MlpModel& sdf, const SurfacePrior& prior, const MatrixX& queries, double lambda,
                             bool detach_direction, LossRecord* parts = nullptr,
                             std::size_t* degenerate = nullptr);

using FitProgress = std::function<void(std::size_t iteration, const LossRecord& loss)>;

FitResult fit_sdf(const PointCloud& cloud, const SurfacePrior& prior, const FitConfig& cfg,
                  const FitProgress& progress = {});

}  // namespace onsurf
