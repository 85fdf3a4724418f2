#include "onsurf/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mc_tables.hpp"

namespace onsurf {
namespace {

constexpr std::size_t kGridChunk = 4096;

}  // namespace

Point3 ScalarGrid::point(std::size_t i, std::size_t j, std::size_t k) const {
  return origin + Vec3(static_cast<double>(i) * spacing, static_cast<double>(j) * spacing,
                       static_cast<double>(k) * spacing);
}

ScalarGrid make_grid(const Bounds& bounds, std::size_t resolution) {
  if (resolution < 8) throw InvalidInput("grid resolution must be at least 8, got " + std::to_string(resolution));
  const Vec3 extent = bounds.max - bounds.min;
  const double side = extent.maxCoeff();
  if (!(side > 0.0) || !std::isfinite(side)) throw InvalidInput("grid bounds must have positive finite extent");
  ScalarGrid g;
  g.resolution = resolution;
  g.spacing = side / static_cast<double>(resolution);
  // Center the cube on the box; the lattice spans resolution - 1 cells.
  const Point3 center = 0.5 * (bounds.min + bounds.max);
  g.origin = center - Vec3::Constant(0.5 * side);
  g.values.assign(resolution * resolution * resolution, 0.0);
  return g;
}

ScalarGrid evaluate_grid(const MlpModel& sdf, const Bounds& bounds, std::size_t resolution) {
  ScalarGrid g = make_grid(bounds, resolution);
  const std::size_t total = g.values.size();
  const std::size_t chunks = (total + kGridChunk - 1) / kGridChunk;
  const std::size_t r = g.resolution;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kGridChunk;
    const std::size_t count = std::min(kGridChunk, total - begin);
    MatrixX x(3, static_cast<Eigen::Index>(count));
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t id = begin + n;
      x.col(static_cast<Eigen::Index>(n)) = g.point(id % r, (id / r) % r, id / (r * r));
    }
    const VectorX v = forward(sdf, x);
    for (std::size_t n = 0; n < count; ++n) g.values[begin + n] = v[static_cast<Eigen::Index>(n)];
  });
  return g;
}

ScalarGrid evaluate_grid(const std::function<double(const Point3&)>& field, const Bounds& bounds,
                         std::size_t resolution) {
  ScalarGrid g = make_grid(bounds, resolution);
  const std::size_t r = g.resolution;
  parallel_for(r, [&](std::size_t k) {
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t i = 0; i < r; ++i) g.values[g.linear(i, j, k)] = field(g.point(i, j, k));
  });
  return g;
}

TriangleMesh marching_cubes(const ScalarGrid& grid, double iso) {
  using namespace detail;
  for (double v : grid.values) {
    if (!std::isfinite(v)) throw InvalidInput("marching_cubes: grid contains non-finite values");
  }
  TriangleMesh mesh;
  const std::size_t r = grid.resolution;
  if (r < 2) return mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;

  // Vertex on the lattice edge leaving lattice point (i, j, k) along `axis`.
  auto vertex_on = [&](std::size_t i, std::size_t j, std::size_t k, int axis) -> std::uint32_t {
    const std::uint64_t key = 3 * static_cast<std::uint64_t>(grid.linear(i, j, k)) + static_cast<std::uint64_t>(axis);
    const auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
    if (inserted) {
      const std::size_t i1 = i + (axis == 0), j1 = j + (axis == 1), k1 = k + (axis == 2);
      const double a = grid.at(i, j, k), b = grid.at(i1, j1, k1);
      const double t = a == b ? 0.5 : (iso - a) / (b - a);
      const Point3 pa = grid.point(i, j, k), pb = grid.point(i1, j1, k1);
      mesh.vertices.push_back(pa + t * (pb - pa));
    }
    return it->second;
  };

  std::array<double, 8> corner;
  std::array<std::uint32_t, 12> edge_ids{};
  for (std::size_t k = 0; k + 1 < r; ++k) {
    for (std::size_t j = 0; j + 1 < r; ++j) {
      for (std::size_t i = 0; i + 1 < r; ++i) {
        int index = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = kCornerOffsets[c];
          corner[c] = grid.at(i + o[0], j + o[1], k + o[2]);
          if (corner[c] <= iso) index |= 1 << c;
        }
        if (index == 0 || index == 255) continue;
        const auto& tri = kTriTable[static_cast<std::size_t>(index)];
        for (int t = 0; tri[t] != -1; ++t) {
          const auto e = static_cast<std::size_t>(tri[t]);
          auto a = kCornerOffsets[kEdgeCorners[e][0]];
          auto b = kCornerOffsets[kEdgeCorners[e][1]];
          if (a > b) std::swap(a, b);
          const int axis = b[0] != a[0] ? 0 : (b[1] != a[1] ? 1 : 2);
          edge_ids[e] = vertex_on(i + a[0], j + a[1], k + a[2], axis);
        }
        for (int t = 0; tri[t] != -1; t += 3) {
          // The table winds triangles with normals toward the corners below
          // iso; reverse so normals face increasing values.
          mesh.faces.push_back({edge_ids[static_cast<std::size_t>(tri[t])],
                                edge_ids[static_cast<std::size_t>(tri[t + 2])],
                                edge_ids[static_cast<std::size_t>(tri[t + 1])]});
        }
      }
    }
  }
  return mesh;
}

TriangleMesh cleanup(const TriangleMesh& mesh, double weld_tolerance) {
  const std::size_t nv = mesh.vertices.size();
  std::vector<std::uint32_t> rep(nv);
  const double cell = weld_tolerance > 0.0 ? weld_tolerance : 1.0;
  auto key_of = [&](const Point3& p) {
    return std::array<long long, 3>{static_cast<long long>(std::floor(p.x() / cell)),
                                    static_cast<long long>(std::floor(p.y() / cell)),
                                    static_cast<long long>(std::floor(p.z() / cell))};
  };
  struct KeyHash {
    std::size_t operator()(const std::array<long long, 3>& k) const {
      std::uint64_t h = splitmix64(static_cast<std::uint64_t>(k[0]));
      h = splitmix64(h ^ static_cast<std::uint64_t>(k[1]));
      return static_cast<std::size_t>(splitmix64(h ^ static_cast<std::uint64_t>(k[2])));
    }
  };
  std::unordered_map<std::array<long long, 3>, std::vector<std::uint32_t>, KeyHash> buckets;
  for (std::uint32_t v = 0; v < nv; ++v) {
    rep[v] = v;
    if (weld_tolerance <= 0.0) continue;
    const auto key = key_of(mesh.vertices[v]);
    bool found = false;
    for (long long dx = -1; dx <= 1 && !found; ++dx)
      for (long long dy = -1; dy <= 1 && !found; ++dy)
        for (long long dz = -1; dz <= 1 && !found; ++dz) {
          const auto it = buckets.find({key[0] + dx, key[1] + dy, key[2] + dz});
          if (it == buckets.end()) continue;
          for (std::uint32_t u : it->second) {
            if ((mesh.vertices[u] - mesh.vertices[v]).norm() <= weld_tolerance) {
              rep[v] = u;
              found = true;
              break;
            }
          }
        }
    if (!found) buckets[key].push_back(v);
  }

  std::vector<std::array<std::uint32_t, 3>> kept;
  std::vector<char> used(nv, 0);
  for (const auto& f : mesh.faces) {
    const std::array<std::uint32_t, 3> t = {rep[f[0]], rep[f[1]], rep[f[2]]};
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    const Vec3 cross = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    if (0.5 * cross.norm() <= 1e-12) continue;
    kept.push_back(t);
    for (auto v : t) used[v] = 1;
  }

  // Surviving vertices keep their relative order.
  TriangleMesh out;
  std::vector<std::uint32_t> remap(nv, 0);
  for (std::uint32_t v = 0; v < nv; ++v) {
    if (!used[v]) continue;
    remap[v] = static_cast<std::uint32_t>(out.vertices.size());
    out.vertices.push_back(mesh.vertices[v]);
  }
  out.faces.reserve(kept.size());
  for (const auto& t : kept) out.faces.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});

  out.normals.assign(out.vertices.size(), Vec3::Zero());
  for (const auto& f : out.faces) {
    const Vec3 cross = (out.vertices[f[1]] - out.vertices[f[0]]).cross(out.vertices[f[2]] - out.vertices[f[0]]);
    for (auto v : f) out.normals[v] += cross;
  }
  for (auto& n : out.normals) {
    const double len = n.norm();
    n = len > 0.0 ? Vec3(n / len) : Vec3::UnitZ();
  }
  return out;
}

TriangleMesh reconstruct(const MlpModel& sdf, const Bounds& cloud_bounds, const ReconstructOptions& options) {
  const ScalarGrid grid = evaluate_grid(sdf, cloud_bounds.inflated(options.bbox_inflation), options.resolution);
  return cleanup(marching_cubes(grid, 0.0), 1e-9 * grid.spacing);
}

}  // namespace onsurf
