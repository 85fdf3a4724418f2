#pragma once

#include <vector>

#include "onsurf/common.hpp"

namespace onsurf {

// An ordered point set with its axis-aligned bounds. Normals are optional;
// when present there is exactly one per point.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Point3> points, std::vector<Vec3> normals = {});

  const std::vector<Point3>& points() const { return points_; }
  const std::vector<Vec3>& normals() const { return normals_; }
  bool has_normals() const { return !normals_.empty(); }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Point3& operator[](std::size_t i) const { return points_[i]; }

  const Point3& bbox_min() const { return bbox_min_; }
  const Point3& bbox_max() const { return bbox_max_; }
  double bbox_diagonal() const { return (bbox_max_ - bbox_min_).norm(); }

  // Pipeline stages need at least four points; throws InvalidInput otherwise.
  void require_valid() const;

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_ == b.points_ && a.normals_ == b.normals_;
  }

 private:
  std::vector<Point3> points_;
  std::vector<Vec3> normals_;
  Point3 bbox_min_ = Point3::Zero();
  Point3 bbox_max_ = Point3::Zero();
};

struct Bounds {
  Point3 min = Point3::Zero();
  Point3 max = Point3::Zero();

  // Grows the box about its center by `fraction` of each extent.
  Bounds inflated(double fraction) const;
};

inline Bounds bounds_of(const PointCloud& cloud) { return {cloud.bbox_min(), cloud.bbox_max()}; }

}  // namespace onsurf
