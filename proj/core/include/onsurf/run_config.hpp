#pragma once

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "onsurf/fitter.hpp"
#include "onsurf/metrics.hpp"
#include "onsurf/prior.hpp"
#include "onsurf/reconstruct.hpp"

namespace onsurf {

inline constexpr const char* kToolVersion = "0.1.0";

struct CorpusConfig {
  std::size_t train_shapes = 10;
  std::size_t test_shapes = 10;
  std::size_t points = 500;           // sparse cloud size
  std::size_t dense_points = 100000;  // reference samples with normals
  double noise = 0.0;                 // fraction of the bbox diagonal
};

struct EvalConfig {
  std::size_t reconstruction_samples = kEvalSamples;
  std::size_t reference_samples = kEvalSamples;
  double threshold = kShapeFscoreThreshold;
};

// Whole-pipeline configuration. Every section is optional in the JSON and
// defaults as above. Stage seeds are derived from the global seed, so the
// sections must not carry their own.
struct RunConfig {
  std::uint64_t seed = 0;
  CorpusConfig corpus;
  PriorConfig prior;
  FitConfig fit;
  ReconstructOptions reconstruct;
  EvalConfig eval;

  // Throws ConfigError on unknown keys, wrong types or invalid values.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_file(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
  std::string hash() const;

  // Seeded section configs.
  PriorConfig seeded_prior() const;
  FitConfig seeded_fit(const std::string& cloud_key) const;
};

// Provenance record written next to every command's outputs.
class RunManifest {
 public:
  RunManifest(std::string command, const RunConfig& config);

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  void add_timing(const std::string& stage, double seconds);
  void set(const std::string& key, nlohmann::json value);

  // Digests are taken at write time.
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::string command_;
  std::string config_hash_;
  std::uint64_t seed_ = 0;
  std::vector<std::filesystem::path> inputs_;
  std::vector<std::filesystem::path> outputs_;
  std::vector<std::pair<std::string, double>> timings_;
  nlohmann::json extra_ = nlohmann::json::object();
};

std::string file_sha256(const std::filesystem::path& path);

}  // namespace onsurf
