#pragma once

#include <vector>

#include "onsurf/mesh.hpp"
#include "onsurf/mlp.hpp"
#include "onsurf/point_cloud.hpp"

namespace onsurf {

// Cubic lattice of resolution^3 samples. Lattice point (i, j, k) sits at
// origin + spacing * (i, j, k); i varies fastest in `values`.
struct ScalarGrid {
  std::size_t resolution = 0;
  Point3 origin = Point3::Zero();
  double spacing = 1.0;
  std::vector<double> values;

  std::size_t linear(std::size_t i, std::size_t j, std::size_t k) const { return (k * resolution + j) * resolution + i; }
  double at(std::size_t i, std::size_t j, std::size_t k) const { return values[linear(i, j, k)]; }
  Point3 point(std::size_t i, std::size_t j, std::size_t k) const;
};

// Lattice over the cube enclosing `bounds`: spacing = longest extent /
// resolution, so doubling the resolution keeps every old lattice point.
ScalarGrid make_grid(const Bounds& bounds, std::size_t resolution);

// Fills grid values with the network output. Requires resolution >= 8.
ScalarGrid evaluate_grid(const MlpModel& sdf, const Bounds& bounds, std::size_t resolution);

// Fills grid values from any scalar field.
ScalarGrid evaluate_grid(const std::function<double(const Point3&)>& field, const Bounds& bounds,
                         std::size_t resolution);

// Triangulates the iso level set. Face winding makes normals point toward
// increasing field values. Vertices are shared between cells through their
// lattice edge, so closed level sets produce watertight meshes.
TriangleMesh marching_cubes(const ScalarGrid& grid, double iso = 0.0);

// Welds vertices closer than weld_tolerance, drops faces with repeated
// vertices or area below 1e-12, removes unreferenced vertices and recomputes
// area-weighted vertex normals.
TriangleMesh cleanup(const TriangleMesh& mesh, double weld_tolerance);

struct ReconstructOptions {
  std::size_t resolution = 128;
  double bbox_inflation = 0.1;
};

// evaluate_grid + marching_cubes + cleanup over the cloud's inflated bounds.
TriangleMesh reconstruct(const MlpModel& sdf, const Bounds& cloud_bounds, const ReconstructOptions& options = {});

}  // namespace onsurf
