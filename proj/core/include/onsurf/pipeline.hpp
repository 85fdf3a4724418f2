#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "onsurf/run_config.hpp"

namespace onsurf {

// Corpus directory layout:
//   corpus.json                      index: seed, corpus config, shape specs
//   {train,test}/shape_NN.json       oracle spec
//   {train,test}/shape_NN.xyz        sparse cloud
//   {train,test}/shape_NN_dense.ply  reference samples with normals
//   run_manifest.json
struct CorpusShape {
  std::string split;  // "train" or "test"
  std::size_t index = 0;
  ShapeOracle shape;

  std::string key() const;  // e.g. "test/shape_03"
  std::filesystem::path spec_path(const std::filesystem::path& dir) const;
  std::filesystem::path cloud_path(const std::filesystem::path& dir) const;
  std::filesystem::path dense_path(const std::filesystem::path& dir) const;
};

std::vector<CorpusShape> corpus_shapes(const RunConfig& cfg, const std::string& split);
std::vector<CorpusShape> load_corpus(const std::filesystem::path& dir, const std::string& split);

// Sparse input cloud for a corpus shape: cfg.corpus.points samples plus
// cfg.corpus.noise, seeded by the run seed and the shape key.
PointCloud corpus_cloud(const RunConfig& cfg, const CorpusShape& shape);

// One cloud through fit, reconstruction and evaluation against the oracle.
// A null prior selects the oracle prior.
struct ShapeOutcome {
  std::string key;
  MetricsReport metrics;
  LossRecord final_loss;
  double fit_seconds = 0.0;
  double reconstruct_seconds = 0.0;
  std::size_t faces = 0;
  std::size_t degenerate_queries = 0;
};
ShapeOutcome run_shape(const RunConfig& cfg, const PriorModel* prior, const CorpusShape& shape,
                       const PointCloud& cloud);

// Samples a mesh and a reference surface and computes all metrics.
MetricsReport evaluate_mesh(const RunConfig& cfg, const TriangleMesh& mesh, const SampledSurface& reference,
                            const std::string& key);
SampledSurface reference_from_oracle(const RunConfig& cfg, const ShapeOracle& oracle, const std::string& key);

PriorModel train_corpus_prior(const RunConfig& cfg, const std::vector<ShapeOracle>& shapes, std::ostream& log);

// Command implementations. Each writes a RunManifest next to its outputs.
void cmd_gen_corpus(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

void cmd_train_prior(const RunConfig& cfg, const std::filesystem::path& corpus_dir,
                     const std::filesystem::path& out_model, std::ostream& log);

struct FitCommand {
  std::filesystem::path cloud;
  std::filesystem::path prior_model;  // learned prior
  std::filesystem::path oracle_spec;  // oracle prior instead, when non-empty
  std::filesystem::path out_model;
  std::filesystem::path report;  // defaults to <out_model>.fit.json
};
void cmd_fit(const RunConfig& cfg, const FitCommand& command, std::ostream& log);

// Returns false when the mesh came out empty (an empty file is still written).
bool cmd_reconstruct(const RunConfig& cfg, const std::filesystem::path& sdf_model,
                     const std::filesystem::path& out_mesh, std::ostream& log);

// reference: a PLY cloud with normals or an oracle spec (.json).
MetricsReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& mesh,
                       const std::filesystem::path& reference, const std::filesystem::path& out_report,
                       std::ostream& log);

struct AblationSpec {
  std::string axis;                 // lambda, k, normalization, density, noise, prior_mode
  std::vector<std::string> values;  // empty: the axis's full candidate list
};

// Candidate values of an axis; throws ConfigError for unknown axes.
std::vector<std::string> ablation_candidates(const std::string& axis);
// Config of one cell; throws ConfigError when the value is not a candidate.
RunConfig ablation_cell_config(const RunConfig& base, const std::string& axis, const std::string& value);

struct AblationRow {
  std::string value;
  double mean_l1cd = 0.0;
  double mean_nc = 0.0;
  std::vector<ShapeOutcome> shapes;
};

// Writes <out_dir>/<axis>.csv and one JSON per cell. prior_model is used by
// the axes that do not retrain the prior; when empty one is trained.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const AblationSpec& spec,
                                    const std::filesystem::path& corpus_dir,
                                    const std::filesystem::path& prior_model, const std::filesystem::path& out_dir,
                                    std::size_t jobs, std::ostream& log);

}  // namespace onsurf
