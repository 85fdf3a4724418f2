#include "onsurf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "onsurf/knn_index.hpp"

namespace onsurf {
namespace {

constexpr std::size_t kQueryChunk = 2048;

struct NearestMatch {
  std::vector<double> distance;
  std::vector<std::uint32_t> index;
};

// Nearest neighbor in `to` for every point of `from`.
NearestMatch match(const SampledSurface& from, const SampledSurface& to) {
  if (from.points.empty() || to.points.empty()) throw InvalidInput("metrics need nonempty sample sets");
  const KnnIndex index(to.points);
  NearestMatch m;
  m.distance.resize(from.size());
  m.index.resize(from.size());
  const std::size_t chunks = (from.size() + kQueryChunk - 1) / kQueryChunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t end = std::min(from.size(), (c + 1) * kQueryChunk);
    for (std::size_t i = c * kQueryChunk; i < end; ++i) {
      const Neighbor n = index.nearest(from.points[i]);
      m.distance[i] = n.distance;
      m.index[i] = n.index;
    }
  });
  return m;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double mean_squared(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s / static_cast<double>(v.size());
}

double mean_abs_cos(const SampledSurface& from, const SampledSurface& to, const NearestMatch& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) s += std::abs(from.normals[i].dot(to.normals[m.index[i]]));
  return s / static_cast<double>(from.size());
}

double fraction_within(const std::vector<double>& d, double threshold) {
  std::size_t hits = 0;
  for (double x : d) hits += x <= threshold;
  return static_cast<double>(hits) / static_cast<double>(d.size());
}

double f_measure(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

void require_normals(const SampledSurface& s) {
  if (s.normals.size() != s.points.size()) throw InvalidInput("normal consistency needs one normal per sample");
}

}  // namespace

SampledSurface sample_mesh(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  if (mesh.empty()) throw InvalidInput("sample_mesh: mesh has no faces");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    total += mesh.face_area(f);
    cumulative[f] = total;
  }
  if (!(total > 0.0)) throw InvalidInput("sample_mesh: mesh has zero area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SampledSurface s;
  s.source = SurfaceSource::mesh;
  s.points.reserve(n);
  s.normals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pick = u(rng) * total;
    auto f = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    f = std::min(f, mesh.faces.size() - 1);
    while (mesh.face_area(f) == 0.0) f = (f + 1) % mesh.faces.size();
    double r1 = u(rng), r2 = u(rng);
    if (r1 + r2 > 1.0) {
      r1 = 1.0 - r1;
      r2 = 1.0 - r2;
    }
    const auto& t = mesh.faces[f];
    const Point3& a = mesh.vertices[t[0]];
    s.points.push_back(a + r1 * (mesh.vertices[t[1]] - a) + r2 * (mesh.vertices[t[2]] - a));
    s.normals.push_back(mesh.face_normal(f));
  }
  return s;
}

SampledSurface sample_oracle(const ShapeOracle& oracle, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SampledSurface s;
  s.source = SurfaceSource::oracle;
  s.points.reserve(n);
  s.normals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SurfacePoint p = oracle.sample(rng);
    s.points.push_back(p.position);
    s.normals.push_back(p.normal);
  }
  return s;
}

ChamferDistance chamfer(const SampledSurface& a, const SampledSurface& b) {
  const NearestMatch ab = match(a, b), ba = match(b, a);
  return {0.5 * (mean(ab.distance) + mean(ba.distance)), 0.5 * (mean_squared(ab.distance) + mean_squared(ba.distance))};
}

double normal_consistency(const SampledSurface& a, const SampledSurface& b) {
  require_normals(a);
  require_normals(b);
  return 0.5 * (mean_abs_cos(a, b, match(a, b)) + mean_abs_cos(b, a, match(b, a)));
}

double fscore(const SampledSurface& a, const SampledSurface& b, double threshold) {
  if (!(threshold > 0.0)) throw InvalidInput("fscore threshold must be positive");
  return f_measure(fraction_within(match(a, b).distance, threshold), fraction_within(match(b, a).distance, threshold));
}

MetricsReport evaluate_surfaces(const SampledSurface& reconstruction, const SampledSurface& reference,
                                double threshold) {
  if (!(threshold > 0.0)) throw InvalidInput("fscore threshold must be positive");
  require_normals(reconstruction);
  require_normals(reference);
  const NearestMatch ab = match(reconstruction, reference), ba = match(reference, reconstruction);
  MetricsReport r;
  r.l1cd = 0.5 * (mean(ab.distance) + mean(ba.distance));
  r.l2cd = 0.5 * (mean_squared(ab.distance) + mean_squared(ba.distance));
  r.nc = 0.5 * (mean_abs_cos(reconstruction, reference, ab) + mean_abs_cos(reference, reconstruction, ba));
  r.fscore = f_measure(fraction_within(ab.distance, threshold), fraction_within(ba.distance, threshold));
  r.threshold = threshold;
  r.reconstruction_samples = reconstruction.size();
  r.reference_samples = reference.size();
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  return {{"l1cd", l1cd},
          {"l2cd", l2cd},
          {"nc", nc},
          {"fscore", fscore},
          {"threshold", threshold},
          {"l1cd_x10", l1cd * 10.0},
          {"l2cd_x1000", l2cd * 1000.0},
          {"reconstruction_samples", reconstruction_samples},
          {"reference_samples", reference_samples},
          {"reconstruction_seed", reconstruction_seed},
          {"reference_seed", reference_seed}};
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    r.l1cd = j.at("l1cd").get<double>();
    r.l2cd = j.at("l2cd").get<double>();
    r.nc = j.at("nc").get<double>();
    r.fscore = j.at("fscore").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.reconstruction_samples = j.at("reconstruction_samples").get<std::size_t>();
    r.reference_samples = j.at("reference_samples").get<std::size_t>();
    r.reconstruction_seed = j.at("reconstruction_seed").get<std::uint64_t>();
    r.reference_seed = j.at("reference_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

}  // namespace onsurf
