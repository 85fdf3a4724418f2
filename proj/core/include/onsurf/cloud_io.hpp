#pragma once

#include <filesystem>

#include "onsurf/point_cloud.hpp"

namespace onsurf {

// ASCII, one point per line: "x y z" or "x y z nx ny nz". Blank lines and
// lines starting with '#' are skipped. Every data line must have the same
// number of columns.
void write_xyz(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_xyz(const std::filesystem::path& path);

// Vertex-only PLY. Written as binary little-endian doubles; reading accepts
// ascii or binary_little_endian with any scalar type, picks x y z and
// optionally nx ny nz from the vertex element, and skips other properties
// and elements.
void write_ply_cloud(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_ply_cloud(const std::filesystem::path& path);

// Dispatches on the file extension (.xyz or .ply).
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_cloud(const std::filesystem::path& path);

}  // namespace onsurf
