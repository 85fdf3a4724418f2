#include "onsurf/cloud_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace onsurf {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void append_double(std::string& s, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  s.append(buf, res.ptr);
}

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::ranges::transform(ext, ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

PointCloud make_cloud(std::vector<Point3> points, std::vector<Vec3> normals, std::uint64_t offset) {
  for (const auto& p : points)
    if (!p.allFinite()) throw FormatError("non-finite coordinate", offset);
  for (const auto& n : normals)
    if (!n.allFinite()) throw FormatError("non-finite normal", offset);
  return PointCloud(std::move(points), std::move(normals));
}

enum class Scalar { i8, u8, i16, u16, i32, u32, f32, f64 };

Scalar scalar_from_name(const std::string& t, std::uint64_t offset) {
  if (t == "char" || t == "int8") return Scalar::i8;
  if (t == "uchar" || t == "uint8") return Scalar::u8;
  if (t == "short" || t == "int16") return Scalar::i16;
  if (t == "ushort" || t == "uint16") return Scalar::u16;
  if (t == "int" || t == "int32") return Scalar::i32;
  if (t == "uint" || t == "uint32") return Scalar::u32;
  if (t == "float" || t == "float32") return Scalar::f32;
  if (t == "double" || t == "float64") return Scalar::f64;
  throw FormatError("unknown PLY scalar type '" + t + "'", offset);
}

std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::i8: case Scalar::u8: return 1;
    case Scalar::i16: case Scalar::u16: return 2;
    case Scalar::i32: case Scalar::u32: case Scalar::f32: return 4;
    case Scalar::f64: return 8;
  }
  return 0;
}

template <typename T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

double decode(Scalar s, const char* p) {
  switch (s) {
    case Scalar::i8: return load<std::int8_t>(p);
    case Scalar::u8: return load<std::uint8_t>(p);
    case Scalar::i16: return load<std::int16_t>(p);
    case Scalar::u16: return load<std::uint16_t>(p);
    case Scalar::i32: return load<std::int32_t>(p);
    case Scalar::u32: return load<std::uint32_t>(p);
    case Scalar::f32: return load<float>(p);
    case Scalar::f64: return load<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  Scalar type = Scalar::f64;
  bool is_list = false;
  Scalar count_type = Scalar::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

// Cursor over the body that reads one scalar at a time in either encoding.
class BodyReader {
 public:
  BodyReader(const std::string& bytes, std::size_t pos, bool binary) : bytes_(bytes), pos_(pos), binary_(binary) {}

  double next(Scalar type) {
    if (binary_) {
      const std::size_t n = scalar_size(type);
      if (pos_ + n > bytes_.size()) throw FormatError("truncated PLY body", pos_);
      const double v = decode(type, bytes_.data() + pos_);
      pos_ += n;
      return v;
    }
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (pos_ >= bytes_.size()) throw FormatError("truncated PLY body", pos_);
    double v = 0.0;
    const auto res = std::from_chars(bytes_.data() + pos_, bytes_.data() + bytes_.size(), v);
    if (res.ec != std::errc()) throw FormatError("bad number in PLY body", pos_);
    pos_ = static_cast<std::size_t>(res.ptr - bytes_.data());
    return v;
  }

  void expect_end() {
    if (!binary_)
      while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (pos_ != bytes_.size()) throw FormatError("trailing bytes after PLY body", pos_);
  }

  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t pos_;
  bool binary_;
};

}  // namespace

void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  std::string text;
  text.reserve(cloud.size() * (cloud.has_normals() ? 120 : 60));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud[i];
    append_double(text, p.x()); text += ' ';
    append_double(text, p.y()); text += ' ';
    append_double(text, p.z());
    if (cloud.has_normals()) {
      const Vec3& n = cloud.normals()[i];
      for (int a = 0; a < 3; ++a) {
        text += ' ';
        append_double(text, n[a]);
      }
    }
    text += '\n';
  }
  out << text;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

PointCloud read_xyz(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<Point3> points;
  std::vector<Vec3> normals;
  int columns = -1;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::size_t line_start = pos;
    const char* p = text.data() + pos;
    const char* end = text.data() + eol;
    pos = eol + 1;
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p == end || *p == '#') continue;
    double v[6];
    int n = 0;
    while (p < end) {
      if (n == 6) throw FormatError("too many columns in XYZ line", line_start);
      const auto res = std::from_chars(p, end, v[n]);
      if (res.ec != std::errc()) throw FormatError("bad number in XYZ line", static_cast<std::uint64_t>(p - text.data()));
      p = res.ptr;
      ++n;
      while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    }
    if (n != 3 && n != 6) throw FormatError("XYZ lines need 3 or 6 columns", line_start);
    if (columns < 0) columns = n;
    if (n != columns) throw FormatError("inconsistent column count in XYZ file", line_start);
    points.emplace_back(v[0], v[1], v[2]);
    if (n == 6) normals.emplace_back(v[3], v[4], v[5]);
  }
  return make_cloud(std::move(points), std::move(normals), 0);
}

void write_ply_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(cloud.size()) +
                       "\nproperty double x\nproperty double y\nproperty double z\n";
  if (cloud.has_normals()) header += "property double nx\nproperty double ny\nproperty double nz\n";
  header += "end_header\n";
  std::string body;
  body.reserve(cloud.size() * 48);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    body.append(reinterpret_cast<const char*>(cloud[i].data()), 3 * sizeof(double));
    if (cloud.has_normals()) body.append(reinterpret_cast<const char*>(cloud.normals()[i].data()), 3 * sizeof(double));
  }
  out << header << body;
  if (!out) throw InvalidInput("failed writing " + path.string());
}

PointCloud read_ply_cloud(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const auto header_end = bytes.find("end_header\n");
  if (bytes.rfind("ply\n", 0) != 0 || header_end == std::string::npos) throw FormatError("not a PLY file", 0);
  const std::size_t body_start = header_end + std::string("end_header\n").size();

  std::istringstream header(bytes.substr(0, header_end));
  std::string line;
  std::getline(header, line);
  bool binary = false;
  bool have_format = false;
  std::vector<PlyElement> elements;
  std::uint64_t offset = 4;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw FormatError("unsupported PLY format '" + fmt + "'", offset);
      have_format = true;
    } else if (word == "element") {
      PlyElement e;
      if (!(ls >> e.name >> e.count)) throw FormatError("bad PLY element line", offset);
      elements.push_back(std::move(e));
    } else if (word == "property") {
      if (elements.empty()) throw FormatError("PLY property before any element", offset);
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type;
        p.is_list = true;
        p.count_type = scalar_from_name(count_type, offset);
        p.type = scalar_from_name(item_type, offset);
      } else {
        p.type = scalar_from_name(type, offset);
      }
      if (!(ls >> p.name)) throw FormatError("PLY property without a name", offset);
      elements.back().props.push_back(std::move(p));
    } else if (word != "comment" && word != "obj_info" && !word.empty()) {
      throw FormatError("unexpected PLY header line '" + line + "'", offset);
    }
    offset += line.size() + 1;
  }
  if (!have_format) throw FormatError("PLY header has no format line", 0);

  const auto vertex_it = std::ranges::find(elements, std::string("vertex"), &PlyElement::name);
  if (vertex_it == elements.end()) throw FormatError("PLY file has no vertex element", 0);
  auto index_of = [&](const char* name) -> int {
    for (std::size_t i = 0; i < vertex_it->props.size(); ++i)
      if (vertex_it->props[i].name == name && !vertex_it->props[i].is_list) return static_cast<int>(i);
    return -1;
  };
  const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  const int inx = index_of("nx"), iny = index_of("ny"), inz = index_of("nz");
  if (ix < 0 || iy < 0 || iz < 0) throw FormatError("PLY vertex element lacks x, y or z", 0);
  const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

  BodyReader reader(bytes, body_start, binary);
  std::vector<Point3> points;
  std::vector<Vec3> normals;
  std::vector<double> row;
  for (const auto& e : elements) {
    const bool is_vertex = &e == &*vertex_it;
    if (is_vertex) {
      points.reserve(e.count);
      if (with_normals) normals.reserve(e.count);
    }
    for (std::size_t r = 0; r < e.count; ++r) {
      row.assign(e.props.size(), 0.0);
      for (std::size_t q = 0; q < e.props.size(); ++q) {
        const auto& prop = e.props[q];
        if (!prop.is_list) {
          row[q] = reader.next(prop.type);
          continue;
        }
        const double n = reader.next(prop.count_type);
        if (!(n >= 0.0)) throw FormatError("negative PLY list length", reader.pos());
        for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) reader.next(prop.type);
      }
      if (is_vertex) {
        points.emplace_back(row[ix], row[iy], row[iz]);
        if (with_normals) normals.emplace_back(row[inx], row[iny], row[inz]);
      }
    }
  }
  reader.expect_end();
  return make_cloud(std::move(points), std::move(normals), body_start);
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".xyz") return write_xyz(cloud, path);
  if (ext == ".ply") return write_ply_cloud(cloud, path);
  throw InvalidInput("unsupported cloud extension '" + ext + "' (expected .xyz or .ply)");
}

PointCloud read_cloud(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".xyz") return read_xyz(path);
  if (ext == ".ply") return read_ply_cloud(path);
  throw InvalidInput("unsupported cloud extension '" + ext + "' (expected .xyz or .ply)");
}

}  // namespace onsurf
