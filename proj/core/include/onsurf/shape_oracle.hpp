#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "onsurf/point_cloud.hpp"

namespace onsurf {

enum class ShapeKind { sphere, box, torus, ellipsoid, csg_union, csg_smooth_blend };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

// world = scale * rotation * local + translation
struct Similarity {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Point3 apply(const Point3& local) const { return scale * (rotation * local) + translation; }
  Point3 inverse(const Point3& world) const {
    return rotation.transpose() * (world - translation) / scale;
  }
};

struct SurfacePoint {
  Point3 position;
  Vec3 normal;  // outward unit normal
};

// Analytic closed surface with exact distance queries. Local-frame parameters
// are kind specific:
//   sphere        {radius}
//   box           {hx, hy, hz}                 half extents
//   torus         {major, minor}               ring in the local xy plane
//   ellipsoid     {a, b, c}                    semi-axes
//   csg_union     {r1, r2, separation}         spheres at z=0 and z=separation
//   csg_smooth_blend {r1, r2, separation, k}   polynomial smooth-min of the same
// The union and blend spheres must overlap without nesting.
class ShapeOracle {
 public:
  static ShapeOracle sphere(double radius);
  static ShapeOracle box(const Vec3& half_extents);
  static ShapeOracle torus(double major, double minor);
  static ShapeOracle ellipsoid(const Vec3& semi_axes);
  static ShapeOracle csg_union(double r1, double r2, double separation);
  static ShapeOracle csg_smooth_blend(double r1, double r2, double separation, double k);
  static ShapeOracle from_json(const nlohmann::json& spec);

  ShapeKind kind() const { return kind_; }
  const std::vector<double>& parameters() const { return params_; }
  const Similarity& pose() const { return pose_; }

  // Composes `pose` after the current one.
  ShapeOracle posed(const Similarity& pose) const;
  // Same shape, centered at the origin with bounding-box diagonal 2.
  ShapeOracle normalized() const;

  Point3 closest_point(const Point3& x) const;
  double udf(const Point3& x) const;
  double signed_distance(const Point3& x) const;  // negative inside
  bool inside(const Point3& x) const;
  bool has_inside_test() const { return true; }
  Vec3 normal_at(const Point3& surface_point) const;

  Bounds bounds() const;

  // Area-uniform surface sample in the world frame.
  SurfacePoint sample(std::mt19937_64& rng) const;

  nlohmann::json to_json() const;

  struct Profile;

 private:
  ShapeOracle(ShapeKind kind, std::vector<double> params);

  Point3 local_closest(const Point3& x) const;
  bool local_inside(const Point3& x) const;
  Vec3 local_normal(const Point3& x) const;

  ShapeKind kind_ = ShapeKind::sphere;
  std::vector<double> params_;
  Similarity pose_;
  std::shared_ptr<const Profile> profile_;  // meridian table for smooth blends
};

// `count` normalized shapes cycling through the six kinds, with randomized
// parameters and orientations.
std::vector<ShapeOracle> generate_shapes(std::size_t count, std::uint64_t seed);

}  // namespace onsurf
