#include "onsurf/sampling.hpp"

#include <cmath>
#include <random>

#include "onsurf/knn_index.hpp"

namespace onsurf {

PointCloud sample_surface(const ShapeOracle& oracle, std::size_t n, std::uint64_t seed) {
  if (n < 4) throw InvalidInput("sample_surface: n must be at least 4, got " + std::to_string(n));
  std::mt19937_64 rng(seed);
  std::vector<Point3> points;
  std::vector<Vec3> normals;
  points.reserve(n);
  normals.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const SurfacePoint s = oracle.sample(rng);
    points.push_back(s.position);
    normals.push_back(s.normal);
  }
  return PointCloud(std::move(points), std::move(normals));
}

std::vector<double> query_sigmas(const PointCloud& cloud, const QuerySamplingOptions& options) {
  std::vector<double> sigmas(cloud.size());
  if (cloud.empty()) return sigmas;
  if (cloud.size() < options.sigma_neighbor + 1 || options.sigma_neighbor == 0) {
    const double sigma = options.fallback_sigma_fraction * cloud.bbox_diagonal();
    std::fill(sigmas.begin(), sigmas.end(), sigma);
    return sigmas;
  }
  const KnnIndex index(cloud);
  std::vector<Neighbor> found;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    index.query(cloud[i], options.sigma_neighbor + 1, found);
    sigmas[i] = found.back().distance;
  }
  return sigmas;
}

std::vector<Point3> sample_queries(const PointCloud& cloud, std::size_t per_point, std::uint64_t seed,
                                   const QuerySamplingOptions& options) {
  if (cloud.empty()) throw InvalidInput("sample_queries: empty cloud");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  std::vector<Point3> queries;
  const std::size_t gaussian = per_point * cloud.size();
  const auto uniform_count = static_cast<std::size_t>(std::llround(options.uniform_ratio * gaussian));
  queries.reserve(gaussian + uniform_count);
  if (per_point > 0) {
    const auto sigmas = query_sigmas(cloud, options);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      for (std::size_t j = 0; j < per_point; ++j) {
        const Vec3 offset(normal(rng), normal(rng), normal(rng));
        queries.push_back(cloud[i] + sigmas[i] * offset);
      }
    }
  }
  const Bounds box = bounds_of(cloud).inflated(options.bbox_inflation);
  const Vec3 extent = box.max - box.min;
  for (std::size_t i = 0; i < uniform_count; ++i) {
    const Vec3 u(uniform(rng), uniform(rng), uniform(rng));
    queries.push_back(box.min + extent.cwiseProduct(u));
  }
  return queries;
}

PointCloud add_noise(const PointCloud& cloud, double sigma_fraction, std::uint64_t seed) {
  if (!(sigma_fraction >= 0.0 && sigma_fraction <= 0.05))
    throw InvalidInput("add_noise: sigma_fraction must lie in [0, 0.05]");
  if (sigma_fraction == 0.0) return cloud;
  const double sigma = sigma_fraction * cloud.bbox_diagonal();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<Point3> points;
  points.reserve(cloud.size());
  for (const auto& p : cloud.points()) points.push_back(p + Vec3(normal(rng), normal(rng), normal(rng)));
  return PointCloud(std::move(points));
}

}  // namespace onsurf
