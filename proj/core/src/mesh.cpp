#include "onsurf/mesh.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace onsurf {
namespace {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::ranges::transform(ext, ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

void check_faces(const TriangleMesh& mesh, std::uint64_t offset) {
  for (const auto& f : mesh.faces)
    for (auto v : f)
      if (v >= mesh.vertices.size()) throw FormatError("face index out of range", offset);
  if (!mesh.normals.empty() && mesh.normals.size() != mesh.vertices.size())
    throw FormatError("normal count does not match vertex count", offset);
}

}  // namespace

Vec3 TriangleMesh::face_normal(std::size_t f) const {
  const auto& t = faces[f];
  const Vec3 c = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
  const double n = c.norm();
  return n > 0.0 ? Vec3(c / n) : Vec3::Zero();
}

double TriangleMesh::face_area(std::size_t f) const {
  const auto& t = faces[f];
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

double TriangleMesh::area() const {
  double total = 0.0;
  for (std::size_t f = 0; f < faces.size(); ++f) total += face_area(f);
  return total;
}

long TriangleMesh::euler_characteristic() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  edges.reserve(3 * faces.size());
  for (const auto& f : faces)
    for (int e = 0; e < 3; ++e) edges.emplace_back(std::minmax(f[e], f[(e + 1) % 3]));
  std::ranges::sort(edges);
  const auto unique_edges = static_cast<long>(std::unique(edges.begin(), edges.end()) - edges.begin());
  return static_cast<long>(vertices.size()) - unique_edges + static_cast<long>(faces.size());
}

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  std::string text;
  for (const auto& v : mesh.vertices)
    text += "v " + format_double(v.x()) + ' ' + format_double(v.y()) + ' ' + format_double(v.z()) + '\n';
  for (const auto& n : mesh.normals)
    text += "vn " + format_double(n.x()) + ' ' + format_double(n.y()) + ' ' + format_double(n.z()) + '\n';
  const bool with_normals = !mesh.normals.empty();
  for (const auto& f : mesh.faces) {
    text += 'f';
    for (auto v : f) {
      const std::string id = std::to_string(v + 1);
      text += ' ' + id;
      if (with_normals) text += "//" + id;
    }
    text += '\n';
  }
  out << text;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  TriangleMesh mesh;
  std::string line;
  std::uint64_t offset = 0;
  auto parse_vec = [&](std::istringstream& ls) {
    Vec3 v;
    if (!(ls >> v.x() >> v.y() >> v.z())) throw FormatError("malformed OBJ vector", offset);
    return v;
  };
  while (std::getline(in, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      mesh.vertices.push_back(parse_vec(ls));
    } else if (tag == "vn") {
      mesh.normals.push_back(parse_vec(ls));
    } else if (tag == "f") {
      std::vector<std::uint32_t> ids;
      std::string token;
      while (ls >> token) {
        long long id = 0;
        const auto res = std::from_chars(token.data(), token.data() + token.size(), id);
        if (res.ec != std::errc() || id == 0) throw FormatError("malformed OBJ face index", line_offset);
        if (id < 0) id += static_cast<long long>(mesh.vertices.size()) + 1;
        if (id <= 0) throw FormatError("OBJ face index out of range", line_offset);
        ids.push_back(static_cast<std::uint32_t>(id - 1));
      }
      if (ids.size() < 3) throw FormatError("OBJ face with fewer than three vertices", line_offset);
      for (std::size_t t = 1; t + 1 < ids.size(); ++t) mesh.faces.push_back({ids[0], ids[t], ids[t + 1]});
    }
  }
  check_faces(mesh, offset);
  return mesh;
}

void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  const bool with_normals = !mesh.normals.empty();
  std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(mesh.vertices.size()) +
                       "\nproperty double x\nproperty double y\nproperty double z\n";
  if (with_normals) header += "property double nx\nproperty double ny\nproperty double nz\n";
  header += "element face " + std::to_string(mesh.faces.size()) + "\nproperty list uchar int vertex_indices\nend_header\n";
  std::string body;
  body.reserve(mesh.vertices.size() * 48 + mesh.faces.size() * 13);
  auto put = [&body](const void* p, std::size_t n) { body.append(static_cast<const char*>(p), n); };
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    put(mesh.vertices[i].data(), 3 * sizeof(double));
    if (with_normals) put(mesh.normals[i].data(), 3 * sizeof(double));
  }
  for (const auto& f : mesh.faces) {
    const std::uint8_t count = 3;
    put(&count, 1);
    for (auto v : f) {
      const auto idx = static_cast<std::int32_t>(v);
      put(&idx, sizeof idx);
    }
  }
  out << header << body;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

TriangleMesh read_mesh_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string end_marker = "end_header\n";
  const auto header_end = bytes.find(end_marker);
  if (bytes.rfind("ply\n", 0) != 0 || header_end == std::string::npos) throw FormatError("not a PLY file", 0);

  std::istringstream header(bytes.substr(0, header_end));
  std::string line;
  std::size_t vertex_count = 0, face_count = 0;
  std::vector<std::string> vertex_props;
  std::string current;
  bool binary = false;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::size_t n = 0;
      ls >> current >> n;
      if (current == "vertex") vertex_count = n;
      else if (current == "face") face_count = n;
      else throw FormatError("unsupported PLY element " + current, 0);
    } else if (word == "property" && current == "vertex") {
      std::string type, name;
      ls >> type >> name;
      if (type != "double") throw FormatError("mesh PLY vertex properties must be double", 0);
      vertex_props.push_back(name);
    } else if (word == "property" && current == "face") {
      std::string list, count_type, index_type;
      ls >> list >> count_type >> index_type;
      if (count_type != "uchar" || index_type != "int") throw FormatError("mesh PLY faces must be uchar/int lists", 0);
    }
  }
  if (!binary) throw FormatError("only binary_little_endian mesh PLY is supported", 0);
  const std::vector<std::string> plain = {"x", "y", "z"};
  const std::vector<std::string> normal = {"x", "y", "z", "nx", "ny", "nz"};
  if (vertex_props != plain && vertex_props != normal) throw FormatError("unexpected PLY vertex properties", 0);
  const bool with_normals = vertex_props.size() == 6;

  std::size_t pos = header_end + end_marker.size();
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > bytes.size()) throw FormatError("truncated PLY body", pos);
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  TriangleMesh mesh;
  mesh.vertices.resize(vertex_count);
  if (with_normals) mesh.normals.resize(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    take(mesh.vertices[i].data(), 3 * sizeof(double));
    if (with_normals) take(mesh.normals[i].data(), 3 * sizeof(double));
  }
  mesh.faces.resize(face_count);
  for (auto& f : mesh.faces) {
    std::uint8_t count = 0;
    take(&count, 1);
    if (count != 3) throw FormatError("non-triangular PLY face", pos - 1);
    for (auto& v : f) {
      std::int32_t idx = 0;
      take(&idx, sizeof idx);
      if (idx < 0) throw FormatError("negative PLY face index", pos - sizeof idx);
      v = static_cast<std::uint32_t>(idx);
    }
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after PLY body", pos);
  check_faces(mesh, pos);
  return mesh;
}

void write_mesh(const TriangleMesh& mesh, const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".obj") return write_obj(mesh, path);
  if (ext == ".ply") return write_ply(mesh, path);
  throw InvalidInput("unsupported mesh extension '" + ext + "' (expected .obj or .ply)");
}

TriangleMesh read_mesh(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".obj") return read_obj(path);
  if (ext == ".ply") return read_mesh_ply(path);
  throw InvalidInput("unsupported mesh extension '" + ext + "' (expected .obj or .ply)");
}

}  // namespace onsurf
