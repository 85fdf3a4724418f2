#pragma once

#include <cstdint>
#include <vector>

#include "onsurf/point_cloud.hpp"

namespace onsurf {

struct Neighbor {
  std::uint32_t index = 0;  // position in the indexed cloud
  double distance = 0.0;
};

// Squared Euclidean distance, evaluated in a fixed operation order so that
// index queries and brute-force scans agree bit for bit.
inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// Exact k-nearest-neighbor search over a fixed point set (kd-tree).
// Results are ordered by ascending distance, ties broken by ascending index,
// which makes them identical to a sorted brute-force scan. Read-only after
// construction, so a single index can serve concurrent queries.
class KnnIndex {
 public:
  explicit KnnIndex(const PointCloud& cloud);
  explicit KnnIndex(std::vector<Point3> points);

  std::size_t size() const { return points_.size(); }
  const Point3& point(std::size_t i) const { return points_[i]; }
  const std::vector<Point3>& points() const { return points_; }

  // Returns min(k, size()) neighbors.
  std::vector<Neighbor> query(const Point3& probe, std::size_t k) const;
  void query(const Point3& probe, std::size_t k, std::vector<Neighbor>& out) const;
  Neighbor nearest(const Point3& probe) const;

 private:
  struct Node {
    double split = 0.0;
    std::int32_t left = -1;   // child node ids; -1 marks a leaf
    std::int32_t right = -1;
    std::uint32_t begin = 0;  // leaf range into order_
    std::uint32_t end = 0;
    std::uint8_t dim = 0;
  };
  struct Candidate {
    double d2;
    std::uint32_t index;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Point3& probe, std::size_t k,
              std::vector<Candidate>& best) const;

  std::vector<Point3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Point3> leaf_points_;  // points_ permuted by order_, for locality
  std::vector<Node> nodes_;
};

}  // namespace onsurf
