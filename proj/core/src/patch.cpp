#include "onsurf/patch.hpp"

namespace onsurf {

LocalPatch extract_patch(const KnnIndex& index, const Point3& probe, std::size_t k) {
  if (k == 0) throw InvalidInput("extract_patch: k must be positive");
  if (k > index.size())
    throw InvalidInput("extract_patch: k=" + std::to_string(k) + " exceeds cloud size " +
                       std::to_string(index.size()));
  if (!all_finite(probe)) throw InvalidInput("extract_patch: non-finite probe");
  LocalPatch patch;
  const auto found = index.query(probe, k);
  patch.neighbors.reserve(k);
  patch.distances.reserve(k);
  patch.indices.reserve(k);
  for (const auto& n : found) {
    patch.neighbors.push_back(index.point(n.index) - probe);
    patch.distances.push_back(n.distance);
    patch.indices.push_back(n.index);
  }
  return patch;
}

}  // namespace onsurf
