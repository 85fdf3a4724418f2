#include "onsurf/point_cloud.hpp"

namespace onsurf {

PointCloud::PointCloud(std::vector<Point3> points, std::vector<Vec3> normals)
    : points_(std::move(points)), normals_(std::move(normals)) {
  if (!normals_.empty() && normals_.size() != points_.size())
    throw InvalidInput("point cloud: normal count " + std::to_string(normals_.size()) +
                       " does not match point count " + std::to_string(points_.size()));
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (!all_finite(points_[i]))
      throw InvalidInput("point cloud: non-finite coordinate at point " + std::to_string(i));
  }
  if (!points_.empty()) {
    bbox_min_ = bbox_max_ = points_.front();
    for (const auto& p : points_) {
      bbox_min_ = bbox_min_.cwiseMin(p);
      bbox_max_ = bbox_max_.cwiseMax(p);
    }
  }
}

void PointCloud::require_valid() const {
  if (points_.size() < 4)
    throw InvalidInput("point cloud needs at least 4 points, got " + std::to_string(points_.size()));
}

Bounds Bounds::inflated(double fraction) const {
  const Point3 center = 0.5 * (min + max);
  const Point3 half = 0.5 * (max - min) * (1.0 + fraction);
  return {center - half, center + half};
}

}  // namespace onsurf
