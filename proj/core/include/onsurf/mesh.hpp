#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "onsurf/common.hpp"

namespace onsurf {

struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
  std::vector<Vec3> normals;  // per vertex, optional

  bool empty() const { return faces.empty(); }
  double area() const;
  Vec3 face_normal(std::size_t f) const;  // unit, zero for degenerate faces
  double face_area(std::size_t f) const;
  // V - E + F, counting each undirected edge once.
  long euler_characteristic() const;
  friend bool operator==(const TriangleMesh&, const TriangleMesh&) = default;
};

// ASCII OBJ with v / vn / f records. Coordinates are written with 17
// significant digits so reading restores them exactly.
void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_obj(const std::filesystem::path& path);

// Binary little-endian PLY with double vertex properties and int32 face lists.
void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_mesh_ply(const std::filesystem::path& path);

// Dispatches on the file extension (.obj or .ply).
void write_mesh(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_mesh(const std::filesystem::path& path);

}  // namespace onsurf
