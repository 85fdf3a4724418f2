#pragma once

#include <cstdint>
#include <vector>

#include "onsurf/point_cloud.hpp"
#include "onsurf/shape_oracle.hpp"

namespace onsurf {

// n area-uniform surface points with outward normals. Requires n >= 4.
PointCloud sample_surface(const ShapeOracle& oracle, std::size_t n, std::uint64_t seed);

struct QuerySamplingOptions {
  // Gaussian scale per cloud point: distance to this neighbor rank
  // (the point itself is rank 0).
  std::size_t sigma_neighbor = 50;
  // Fallback scale, as a fraction of the bbox diagonal, for clouds with
  // fewer than sigma_neighbor + 1 points.
  double fallback_sigma_fraction = 0.1;
  // Uniform queries per Gaussian query, drawn in the inflated bbox.
  double uniform_ratio = 1.0;
  double bbox_inflation = 0.1;
};

// per_point Gaussian queries around every cloud point, followed by the
// uniform batch. Gaussian queries come first, grouped by cloud point.
std::vector<Point3> sample_queries(const PointCloud& cloud, std::size_t per_point,
                                   std::uint64_t seed, const QuerySamplingOptions& options = {});

// Per-point Gaussian scales used by sample_queries.
std::vector<double> query_sigmas(const PointCloud& cloud, const QuerySamplingOptions& options = {});

// Isotropic Gaussian perturbation with std = sigma_fraction * bbox diagonal.
// sigma_fraction must lie in [0, 0.05].
PointCloud add_noise(const PointCloud& cloud, double sigma_fraction, std::uint64_t seed);

}  // namespace onsurf
