#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <vector>

#include "onsurf/knn_index.hpp"
#include "onsurf/mlp.hpp"
#include "onsurf/patch_encoding.hpp"
#include "onsurf/shape_oracle.hpp"

namespace onsurf {

enum class LabelMode { udf, binary, signed_distance };

// "udf", "binary", "signed".
std::string to_string(LabelMode m);
LabelMode label_mode_from_string(const std::string& name);

struct PriorConfig {
  std::size_t k = 50;
  std::size_t queries_per_shape = 20000;
  double near_fraction = 0.8;
  // Gaussian offsets of near probes use one of these scales, chosen uniformly.
  std::vector<double> near_sigmas{0.01, 0.04, 0.1};
  double bbox_inflation = 0.1;
  double label_clamp = 0.2;
  double on_surface_threshold = 0.01;  // binary labels
  LabelMode label_mode = LabelMode::udf;
  PatchNormalization normalization;

  std::size_t hidden_dim = 128;
  std::size_t num_layers = 8;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double final_lr_fraction = 0.01;  // cosine decay floor
  std::uint64_t seed = 0;

  void validate() const;
  MlpArchitecture architecture() const;
  nlohmann::json to_json() const;
  static PriorConfig from_json(const nlohmann::json& j);  // unknown keys rejected
};

// Label of one probe under cfg.label_mode: clamped distance, 1 within
// on_surface_threshold of the surface, or clamped signed distance.
double prior_label(const ShapeOracle& shape, const Point3& probe, const PriorConfig& cfg);

// Training set for the prior. Records are stored in single precision:
// probe(3) | neighbors relative to the probe(3k) | distances(k) | label(1).
struct PriorDataset {
  std::size_t k = 0;
  LabelMode label_mode = LabelMode::udf;
  std::vector<float> records;
  nlohmann::json manifest = nlohmann::json::object();  // shapes, seeds, config

  std::size_t record_size() const { return 4 * k + 4; }
  std::size_t size() const { return k == 0 ? 0 : records.size() / record_size(); }
  const float* record(std::size_t i) const { return records.data() + i * record_size(); }
  float label(std::size_t i) const { return record(i)[4 * k + 3]; }
  Point3 probe(std::size_t i) const;
};

// Samples a sparse cloud of sparse_n points per shape, then probes around it,
// and labels each probe by its exact distance to the shape.
PriorDataset build_prior_dataset(const std::vector<ShapeOracle>& shapes, std::size_t sparse_n,
                                 const PriorConfig& cfg);

void save_prior_dataset(const PriorDataset& dataset, const std::filesystem::path& dir);
PriorDataset load_prior_dataset(const std::filesystem::path& dir);

// A trained prior together with the patch layout it expects.
struct PriorModel {
  MlpModel network;
  std::size_t k = 50;
  LabelMode label_mode = LabelMode::udf;
  PatchNormalization normalization;

  void validate() const;
  nlohmann::json metadata() const;
  static PriorModel from_file(const std::filesystem::path& path);
  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
};

struct PriorTrainingLog {
  std::vector<double> epoch_loss;  // mean squared error per epoch
};

// Mean squared label regression with Adam. Deterministic given cfg.seed.
PriorModel train_prior(const PriorDataset& dataset, const PriorConfig& cfg, PriorTrainingLog* log = nullptr);

// Network input for every record of the dataset, one column per record.
MatrixX dataset_inputs(const PriorDataset& dataset, PatchNormalization n, std::size_t begin, std::size_t count);

// Raw network output at `probe` (predicted unsigned distance in udf mode).
double eval_prior(const PriorModel& prior, const KnnIndex& index, const Point3& probe);
VectorX eval_prior(const PriorModel& prior, const KnnIndex& index, const std::vector<Point3>& probes);

// Probes whose predicted distance magnitude is below `threshold`.
std::vector<Point3> classify_on_surface(const PriorModel& prior, const KnnIndex& index,
                                        const std::vector<Point3>& probes, double threshold);

}  // namespace onsurf
