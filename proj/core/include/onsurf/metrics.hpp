#pragma once

#include <nlohmann/json.hpp>

#include "onsurf/mesh.hpp"
#include "onsurf/shape_oracle.hpp"

namespace onsurf {

enum class SurfaceSource { mesh, oracle };

struct SampledSurface {
  std::vector<Point3> points;
  std::vector<Vec3> normals;
  SurfaceSource source = SurfaceSource::mesh;

  std::size_t size() const { return points.size(); }
};

// Area-weighted uniform samples, each carrying its face normal.
SampledSurface sample_mesh(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed);
SampledSurface sample_oracle(const ShapeOracle& oracle, std::size_t n, std::uint64_t seed);

struct ChamferDistance {
  double l1 = 0.0;  // mean nearest distance, averaged over both directions
  double l2 = 0.0;  // same with squared distances
};

ChamferDistance chamfer(const SampledSurface& a, const SampledSurface& b);
// Mean |cos| between each sample normal and its nearest neighbor's normal,
// averaged over both directions.
double normal_consistency(const SampledSurface& a, const SampledSurface& b);
double fscore(const SampledSurface& a, const SampledSurface& b, double threshold);

inline constexpr double kShapeFscoreThreshold = 0.001;
inline constexpr std::size_t kEvalSamples = 100000;

struct MetricsReport {
  double l1cd = 0.0;
  double l2cd = 0.0;
  double nc = 0.0;
  double fscore = 0.0;
  double threshold = kShapeFscoreThreshold;
  std::size_t reconstruction_samples = 0;
  std::size_t reference_samples = 0;
  std::uint64_t reconstruction_seed = 0;
  std::uint64_t reference_seed = 0;

  nlohmann::json to_json() const;  // adds l1cd_x10 and l2cd_x1000
  static MetricsReport from_json(const nlohmann::json& j);
};

// All four metrics in one pass over shared nearest-neighbor queries.
MetricsReport evaluate_surfaces(const SampledSurface& reconstruction, const SampledSurface& reference,
                                double threshold = kShapeFscoreThreshold);

}  // namespace onsurf
