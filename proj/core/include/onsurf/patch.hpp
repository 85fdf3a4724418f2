#pragma once

#include <cstdint>
#include <vector>

#include "onsurf/knn_index.hpp"

namespace onsurf {

// The k nearest cloud points of a probe, expressed with the probe as origin
// and ordered by ascending distance (ties by cloud index).
struct LocalPatch {
  std::vector<Vec3> neighbors;
  std::vector<double> distances;
  std::vector<std::uint32_t> indices;

  std::size_t k() const { return neighbors.size(); }
};

LocalPatch extract_patch(const KnnIndex& index, const Point3& probe, std::size_t k);

}  // namespace onsurf
