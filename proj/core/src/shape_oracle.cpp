#include "onsurf/shape_oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Geometry>

namespace onsurf {
namespace {

constexpr double kPi = std::numbers::pi;

Vec3 unit_or(const Vec3& v, const Vec3& fallback) {
  const double n = v.norm();
  return n > 0.0 ? Vec3(v / n) : fallback;
}

double uniform01(std::mt19937_64& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (;;) {
    Vec3 v(normal(rng), normal(rng), normal(rng));
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

// --- ellipsoid closest point by bisection on the Lagrange parameter ---

double root_2d(double r0, double z0, double z1, double g) {
  const double n0 = r0 * z0;
  double s0 = z1 - 1.0;
  double s1 = g < 0.0 ? 0.0 : std::hypot(n0, z1) - 1.0;
  double s = 0.0;
  for (int i = 0; i < 2200; ++i) {
    s = 0.5 * (s0 + s1);
    if (s == s0 || s == s1) break;
    const double a = n0 / (s + r0), b = z1 / (s + 1.0);
    g = a * a + b * b - 1.0;
    if (g > 0.0) s0 = s;
    else if (g < 0.0) s1 = s;
    else break;
  }
  return s;
}

double root_3d(double r0, double r1, double z0, double z1, double z2, double g) {
  const double n0 = r0 * z0, n1 = r1 * z1;
  double s0 = z2 - 1.0;
  double s1 = g < 0.0 ? 0.0 : std::hypot(n0, n1, z2) - 1.0;
  double s = 0.0;
  for (int i = 0; i < 2200; ++i) {
    s = 0.5 * (s0 + s1);
    if (s == s0 || s == s1) break;
    const double a = n0 / (s + r0), b = n1 / (s + r1), c = z2 / (s + 1.0);
    g = a * a + b * b + c * c - 1.0;
    if (g > 0.0) s0 = s;
    else if (g < 0.0) s1 = s;
    else break;
  }
  return s;
}

// e0 >= e1 > 0, y0, y1 >= 0.
std::array<double, 2> ellipse_closest(double e0, double e1, double y0, double y1) {
  if (y1 > 0.0) {
    if (y0 > 0.0) {
      const double z0 = y0 / e0, z1 = y1 / e1;
      const double g = z0 * z0 + z1 * z1 - 1.0;
      if (g == 0.0) return {y0, y1};
      const double r0 = (e0 / e1) * (e0 / e1);
      const double s = root_2d(r0, z0, z1, g);
      return {r0 * y0 / (s + r0), y1 / (s + 1.0)};
    }
    return {0.0, e1};
  }
  const double numer0 = e0 * y0, denom0 = e0 * e0 - e1 * e1;
  if (numer0 < denom0) {
    const double xde0 = numer0 / denom0;
    return {e0 * xde0, e1 * std::sqrt(std::max(0.0, 1.0 - xde0 * xde0))};
  }
  return {e0, 0.0};
}

// e0 >= e1 >= e2 > 0, y >= 0 componentwise.
Vec3 ellipsoid_closest_sorted(const Vec3& e, const Vec3& y) {
  if (y[2] > 0.0) {
    if (y[1] > 0.0) {
      if (y[0] > 0.0) {
        const double z0 = y[0] / e[0], z1 = y[1] / e[1], z2 = y[2] / e[2];
        const double g = z0 * z0 + z1 * z1 + z2 * z2 - 1.0;
        if (g == 0.0) return y;
        const double r0 = (e[0] / e[2]) * (e[0] / e[2]);
        const double r1 = (e[1] / e[2]) * (e[1] / e[2]);
        const double s = root_3d(r0, r1, z0, z1, z2, g);
        return {r0 * y[0] / (s + r0), r1 * y[1] / (s + r1), y[2] / (s + 1.0)};
      }
      const auto x = ellipse_closest(e[1], e[2], y[1], y[2]);
      return {0.0, x[0], x[1]};
    }
    if (y[0] > 0.0) {
      const auto x = ellipse_closest(e[0], e[2], y[0], y[2]);
      return {x[0], 0.0, x[1]};
    }
    return {0.0, 0.0, e[2]};
  }
  const double denom0 = e[0] * e[0] - e[2] * e[2];
  const double denom1 = e[1] * e[1] - e[2] * e[2];
  const double numer0 = e[0] * y[0], numer1 = e[1] * y[1];
  if (numer0 < denom0 && numer1 < denom1) {
    const double xde0 = numer0 / denom0, xde1 = numer1 / denom1;
    const double discr = 1.0 - xde0 * xde0 - xde1 * xde1;
    if (discr > 0.0) return {e[0] * xde0, e[1] * xde1, e[2] * std::sqrt(discr)};
  }
  const auto x = ellipse_closest(e[0], e[1], y[0], y[1]);
  return {x[0], x[1], 0.0};
}

Point3 ellipsoid_closest(const Vec3& axes, const Point3& x) {
  std::array<int, 3> perm{0, 1, 2};
  std::sort(perm.begin(), perm.end(), [&](int a, int b) { return axes[a] > axes[b]; });
  Vec3 e, y;
  for (int i = 0; i < 3; ++i) {
    e[i] = axes[perm[i]];
    y[i] = std::abs(x[perm[i]]);
  }
  const Vec3 c = ellipsoid_closest_sorted(e, y);
  Point3 out;
  for (int i = 0; i < 3; ++i) out[perm[i]] = std::copysign(c[i], x[perm[i]]);
  return out;
}

bool squared_norm_less(const Point3& x, const Point3& a, const Point3& b) {
  return (x - a).squaredNorm() <= (x - b).squaredNorm();
}

// --- two-sphere union ---

struct SpherePair {
  double r1, r2, sep;
  double circle_z() const { return (sep * sep + r1 * r1 - r2 * r2) / (2.0 * sep); }
  double circle_radius() const {
    const double z = circle_z();
    return std::sqrt(std::max(0.0, r1 * r1 - z * z));
  }
};

Point3 closest_on_circle(const Point3& x, double z, double radius) {
  const Vec3 dir = unit_or(Vec3(x.x(), x.y(), 0.0), Vec3::UnitX());
  return {radius * dir.x(), radius * dir.y(), z};
}

void check_sphere_pair(double r1, double r2, double sep) {
  if (!(r1 > 0.0 && r2 > 0.0 && sep > std::abs(r1 - r2) && sep < r1 + r2))
    throw InvalidInput("sphere pair must overlap without nesting: r1=" + std::to_string(r1) +
                       " r2=" + std::to_string(r2) + " separation=" + std::to_string(sep));
}

const std::array<std::vector<std::string>, 6> kParamNames = {{
    {"radius"},
    {"hx", "hy", "hz"},
    {"major", "minor"},
    {"a", "b", "c"},
    {"r1", "r2", "separation"},
    {"r1", "r2", "separation", "k"},
}};

}  // namespace

// Meridian of a smooth two-sphere blend, tabulated by polar angle about an
// axis point inside both spheres. Exact radii come from bisection on the
// implicit field; the table only seeds searches and sampling.
struct ShapeOracle::Profile {
  static constexpr std::size_t kTable = 2049;

  double r1, r2, sep, k, z_origin;
  std::vector<double> alpha;
  std::vector<double> rho;  // table points in (radial, axial) coordinates
  std::vector<double> z;
  std::vector<double> area_cdf;

  Profile(double r1_, double r2_, double sep_, double k_)
      : r1(r1_), r2(r2_), sep(sep_), k(k_), z_origin(SpherePair{r1_, r2_, sep_}.circle_z()) {
    alpha.resize(kTable);
    rho.resize(kTable);
    z.resize(kTable);
    const double reach = r1 + r2 + sep + k;
    for (std::size_t j = 0; j < kTable; ++j) {
      alpha[j] = kPi * static_cast<double>(j) / static_cast<double>(kTable - 1);
      // The blend must be star-shaped about the origin point: one crossing per ray.
      int crossings = 0;
      double prev = field(0.0, z_origin);
      for (int step = 1; step <= 400; ++step) {
        const double t = reach * step / 400.0;
        const double cur = field(t * std::sin(alpha[j]), z_origin + t * std::cos(alpha[j]));
        if ((prev < 0.0) != (cur < 0.0)) ++crossings;
        prev = cur;
      }
      if (crossings != 1) throw InvalidInput("smooth blend parameters give a non star-shaped meridian");
      const double r = radius_at(alpha[j]);
      rho[j] = r * std::sin(alpha[j]);
      z[j] = z_origin + r * std::cos(alpha[j]);
    }
    rho.front() = 0.0;
    rho.back() = 0.0;
    area_cdf.resize(kTable - 1);
    double total = 0.0;
    for (std::size_t j = 0; j + 1 < kTable; ++j) {
      const double len = std::hypot(rho[j + 1] - rho[j], z[j + 1] - z[j]);
      total += len * 0.5 * (rho[j] + rho[j + 1]);
      area_cdf[j] = total;
    }
    for (auto& c : area_cdf) c /= total;
  }

  double blend_weight(double d1, double d2) const {
    return std::clamp(0.5 + 0.5 * (d2 - d1) / k, 0.0, 1.0);
  }

  double field(double r, double axial) const {
    const double d1 = std::hypot(r, axial) - r1;
    const double d2 = std::hypot(r, axial - sep) - r2;
    const double h = blend_weight(d1, d2);
    return d2 + (d1 - d2) * h - k * h * (1.0 - h);
  }

  double radius_at(double a) const {
    const double s = std::sin(a), c = std::cos(a);
    double lo = 0.0, hi = r1 + r2 + sep + k;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      if (mid == lo || mid == hi) break;
      if (field(mid * s, z_origin + mid * c) < 0.0) lo = mid;
      else hi = mid;
    }
    return 0.5 * (lo + hi);
  }

  std::array<double, 2> point_at(double a) const {
    const double r = radius_at(a);
    return {std::max(0.0, r * std::sin(a)), z_origin + r * std::cos(a)};
  }

  // Closest meridian point to (r, axial) with r >= 0.
  std::array<double, 2> closest(double r, double axial) const {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < kTable; ++j) {
      const double d2 = (rho[j] - r) * (rho[j] - r) + (z[j] - axial) * (z[j] - axial);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    double lo = alpha[best == 0 ? 0 : best - 1];
    double hi = alpha[std::min(best + 1, kTable - 1)];
    auto dist2 = [&](double a) {
      const auto p = point_at(a);
      return (p[0] - r) * (p[0] - r) + (p[1] - axial) * (p[1] - axial);
    };
    // Golden-section search inside the bracketing table cells.
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = hi - inv_phi * (hi - lo), b = lo + inv_phi * (hi - lo);
    double fa = dist2(a), fb = dist2(b);
    for (int i = 0; i < 90 && hi - lo > 1e-15; ++i) {
      if (fa < fb) {
        hi = b;
        b = a;
        fb = fa;
        a = hi - inv_phi * (hi - lo);
        fa = dist2(a);
      } else {
        lo = a;
        a = b;
        fa = fb;
        b = lo + inv_phi * (hi - lo);
        fb = dist2(b);
      }
    }
    double arg = 0.5 * (lo + hi);
    double value = dist2(arg);
    // The table point itself may beat the refined interior (kinks, endpoints).
    if (best_d2 < value) return {rho[best], z[best]};
    return point_at(arg);
  }

  Vec3 gradient(const Point3& x) const {
    const Vec3 c2(0.0, 0.0, sep);
    const double d1 = x.norm() - r1;
    const double d2 = (x - c2).norm() - r2;
    const double h = blend_weight(d1, d2);
    const Vec3 g1 = unit_or(x, Vec3::UnitZ());
    const Vec3 g2 = unit_or(x - c2, Vec3::UnitZ());
    return h * g1 + (1.0 - h) * g2;
  }
};

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::torus: return "torus";
    case ShapeKind::ellipsoid: return "ellipsoid";
    case ShapeKind::csg_union: return "csg_union";
    case ShapeKind::csg_smooth_blend: return "csg_smooth_blend";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& name) {
  for (auto kind : {ShapeKind::sphere, ShapeKind::box, ShapeKind::torus, ShapeKind::ellipsoid,
                    ShapeKind::csg_union, ShapeKind::csg_smooth_blend}) {
    if (to_string(kind) == name) return kind;
  }
  throw InvalidInput("unknown shape kind '" + name + "'");
}

ShapeOracle::ShapeOracle(ShapeKind kind, std::vector<double> params)
    : kind_(kind), params_(std::move(params)) {
  for (double p : params_) {
    if (!std::isfinite(p)) throw InvalidInput("shape parameters must be finite");
  }
}

ShapeOracle ShapeOracle::sphere(double radius) {
  if (!(radius > 0.0)) throw InvalidInput("sphere radius must be positive");
  return ShapeOracle(ShapeKind::sphere, {radius});
}

ShapeOracle ShapeOracle::box(const Vec3& h) {
  if (!(h.minCoeff() > 0.0)) throw InvalidInput("box half extents must be positive");
  return ShapeOracle(ShapeKind::box, {h.x(), h.y(), h.z()});
}

ShapeOracle ShapeOracle::torus(double major, double minor) {
  if (!(minor > 0.0 && major > minor)) throw InvalidInput("torus needs major > minor > 0");
  return ShapeOracle(ShapeKind::torus, {major, minor});
}

ShapeOracle ShapeOracle::ellipsoid(const Vec3& e) {
  if (!(e.minCoeff() > 0.0)) throw InvalidInput("ellipsoid semi-axes must be positive");
  return ShapeOracle(ShapeKind::ellipsoid, {e.x(), e.y(), e.z()});
}

ShapeOracle ShapeOracle::csg_union(double r1, double r2, double separation) {
  check_sphere_pair(r1, r2, separation);
  return ShapeOracle(ShapeKind::csg_union, {r1, r2, separation});
}

ShapeOracle ShapeOracle::csg_smooth_blend(double r1, double r2, double separation, double k) {
  check_sphere_pair(r1, r2, separation);
  if (!(k > 0.0)) throw InvalidInput("smooth blend radius k must be positive");
  ShapeOracle shape(ShapeKind::csg_smooth_blend, {r1, r2, separation, k});
  shape.profile_ = std::make_shared<const Profile>(r1, r2, separation, k);
  return shape;
}

ShapeOracle ShapeOracle::posed(const Similarity& p) const {
  if (!(p.scale > 0.0)) throw InvalidInput("pose scale must be positive");
  ShapeOracle out = *this;
  out.pose_.rotation = p.rotation * pose_.rotation;
  out.pose_.scale = p.scale * pose_.scale;
  out.pose_.translation = p.scale * (p.rotation * pose_.translation) + p.translation;
  return out;
}

ShapeOracle ShapeOracle::normalized() const {
  const Bounds b = bounds();
  const double diag = (b.max - b.min).norm();
  const double s = 2.0 / diag;
  ShapeOracle out = *this;
  const Point3 center = 0.5 * (b.min + b.max);
  out.pose_.scale = s * pose_.scale;
  out.pose_.translation = s * (pose_.translation - center);
  return out;
}

Point3 ShapeOracle::local_closest(const Point3& x) const {
  const auto& p = params_;
  switch (kind_) {
    case ShapeKind::sphere:
      return p[0] * unit_or(x, Vec3::UnitZ());
    case ShapeKind::box: {
      const Vec3 h(p[0], p[1], p[2]);
      const Vec3 ax = x.cwiseAbs();
      if ((ax.array() > h.array()).any()) return x.cwiseMax(-h).cwiseMin(h);
      Point3 c = x;
      int face = 0;
      (h - ax).minCoeff(&face);
      c[face] = std::copysign(h[face], x[face]);
      return c;
    }
    case ShapeKind::torus: {
      const Vec3 ring_dir = unit_or(Vec3(x.x(), x.y(), 0.0), Vec3::UnitX());
      const Point3 ring = p[0] * ring_dir;
      return ring + p[1] * unit_or(x - ring, ring_dir);
    }
    case ShapeKind::ellipsoid:
      return ellipsoid_closest(Vec3(p[0], p[1], p[2]), x);
    case ShapeKind::csg_union: {
      const SpherePair pair{p[0], p[1], p[2]};
      const Point3 c1 = Point3::Zero(), c2(0.0, 0.0, pair.sep);
      const Point3 ring = closest_on_circle(x, pair.circle_z(), pair.circle_radius());
      Point3 a = c1 + pair.r1 * unit_or(x - c1, -Vec3::UnitZ());
      if ((a - c2).norm() < pair.r2) a = ring;
      Point3 b = c2 + pair.r2 * unit_or(x - c2, Vec3::UnitZ());
      if ((b - c1).norm() < pair.r1) b = ring;
      return squared_norm_less(x, a, b) ? a : b;
    }
    case ShapeKind::csg_smooth_blend: {
      const double r = std::hypot(x.x(), x.y());
      const auto m = profile_->closest(r, x.z());
      const Vec3 dir = unit_or(Vec3(x.x(), x.y(), 0.0), Vec3::UnitX());
      return {m[0] * dir.x(), m[0] * dir.y(), m[1]};
    }
  }
  return x;
}

bool ShapeOracle::local_inside(const Point3& x) const {
  const auto& p = params_;
  switch (kind_) {
    case ShapeKind::sphere: return x.norm() < p[0];
    case ShapeKind::box: return (x.cwiseAbs().array() < Eigen::Array3d(p[0], p[1], p[2])).all();
    case ShapeKind::torus: {
      const double q = std::hypot(x.x(), x.y()) - p[0];
      return std::hypot(q, x.z()) < p[1];
    }
    case ShapeKind::ellipsoid: {
      const double v = (x.x() / p[0]) * (x.x() / p[0]) + (x.y() / p[1]) * (x.y() / p[1]) +
                       (x.z() / p[2]) * (x.z() / p[2]);
      return v < 1.0;
    }
    case ShapeKind::csg_union:
      return x.norm() < p[0] || (x - Point3(0.0, 0.0, p[2])).norm() < p[1];
    case ShapeKind::csg_smooth_blend:
      return profile_->field(std::hypot(x.x(), x.y()), x.z()) < 0.0;
  }
  return false;
}

Vec3 ShapeOracle::local_normal(const Point3& x) const {
  const auto& p = params_;
  switch (kind_) {
    case ShapeKind::sphere: return unit_or(x, Vec3::UnitZ());
    case ShapeKind::box: {
      const Vec3 h(p[0], p[1], p[2]);
      int face = 0;
      (h - x.cwiseAbs()).minCoeff(&face);
      Vec3 n = Vec3::Zero();
      n[face] = std::copysign(1.0, x[face]);
      return n;
    }
    case ShapeKind::torus: {
      const Point3 ring = p[0] * unit_or(Vec3(x.x(), x.y(), 0.0), Vec3::UnitX());
      return unit_or(x - ring, Vec3::UnitZ());
    }
    case ShapeKind::ellipsoid:
      return unit_or(Vec3(x.x() / (p[0] * p[0]), x.y() / (p[1] * p[1]), x.z() / (p[2] * p[2])),
                     Vec3::UnitZ());
    case ShapeKind::csg_union: {
      const Point3 c2(0.0, 0.0, p[2]);
      const double e1 = std::abs(x.norm() - p[0]);
      const double e2 = std::abs((x - c2).norm() - p[1]);
      return e1 <= e2 ? unit_or(x, -Vec3::UnitZ()) : unit_or(x - c2, Vec3::UnitZ());
    }
    case ShapeKind::csg_smooth_blend:
      return unit_or(profile_->gradient(x), Vec3::UnitZ());
  }
  return Vec3::UnitZ();
}

Point3 ShapeOracle::closest_point(const Point3& x) const {
  return pose_.apply(local_closest(pose_.inverse(x)));
}

double ShapeOracle::udf(const Point3& x) const { return (x - closest_point(x)).norm(); }

bool ShapeOracle::inside(const Point3& x) const { return local_inside(pose_.inverse(x)); }

double ShapeOracle::signed_distance(const Point3& x) const {
  const double d = udf(x);
  return inside(x) ? -d : d;
}

Vec3 ShapeOracle::normal_at(const Point3& surface_point) const {
  return (pose_.rotation * local_normal(pose_.inverse(surface_point))).normalized();
}

Bounds ShapeOracle::bounds() const {
  const auto& p = params_;
  const Mat3& R = pose_.rotation;
  const double s = pose_.scale;
  const Vec3& t = pose_.translation;
  auto sphere_bounds = [&](const Point3& local_center, double radius) {
    const Point3 c = pose_.apply(local_center);
    return Bounds{(c.array() - s * radius).matrix(), (c.array() + s * radius).matrix()};
  };
  auto merge = [](const Bounds& a, const Bounds& b) {
    return Bounds{a.min.cwiseMin(b.min), a.max.cwiseMax(b.max)};
  };
  switch (kind_) {
    case ShapeKind::sphere: return sphere_bounds(Point3::Zero(), p[0]);
    case ShapeKind::box: {
      Bounds b{Point3::Constant(std::numeric_limits<double>::infinity()),
               Point3::Constant(-std::numeric_limits<double>::infinity())};
      for (int c = 0; c < 8; ++c) {
        const Point3 corner((c & 1) ? p[0] : -p[0], (c & 2) ? p[1] : -p[1], (c & 4) ? p[2] : -p[2]);
        const Point3 w = pose_.apply(corner);
        b.min = b.min.cwiseMin(w);
        b.max = b.max.cwiseMax(w);
      }
      return b;
    }
    case ShapeKind::ellipsoid: {
      Vec3 ext;
      for (int i = 0; i < 3; ++i) {
        ext[i] = s * std::sqrt(std::pow(R(i, 0) * p[0], 2) + std::pow(R(i, 1) * p[1], 2) +
                               std::pow(R(i, 2) * p[2], 2));
      }
      return {t - ext, t + ext};
    }
    case ShapeKind::torus: {
      Vec3 ext;
      for (int i = 0; i < 3; ++i) {
        const double n = R(i, 2);
        ext[i] = s * (p[0] * std::sqrt(std::max(0.0, 1.0 - n * n)) + p[1]);
      }
      return {t - ext, t + ext};
    }
    case ShapeKind::csg_union:
      return merge(sphere_bounds(Point3::Zero(), p[0]), sphere_bounds(Point3(0, 0, p[2]), p[1]));
    case ShapeKind::csg_smooth_blend: {
      Bounds b{Point3::Constant(std::numeric_limits<double>::infinity()),
               Point3::Constant(-std::numeric_limits<double>::infinity())};
      for (std::size_t j = 0; j < Profile::kTable; ++j) {
        const Point3 c = pose_.apply(Point3(0.0, 0.0, profile_->z[j]));
        for (int i = 0; i < 3; ++i) {
          const double n = R(i, 2);
          const double spread = s * profile_->rho[j] * std::sqrt(std::max(0.0, 1.0 - n * n));
          b.min[i] = std::min(b.min[i], c[i] - spread);
          b.max[i] = std::max(b.max[i], c[i] + spread);
        }
      }
      return b;
    }
  }
  return {};
}

SurfacePoint ShapeOracle::sample(std::mt19937_64& rng) const {
  const auto& p = params_;
  Point3 local;
  switch (kind_) {
    case ShapeKind::sphere:
      local = p[0] * random_unit(rng);
      break;
    case ShapeKind::box: {
      const std::array<double, 3> area{p[1] * p[2], p[0] * p[2], p[0] * p[1]};
      const double u = uniform01(rng) * (area[0] + area[1] + area[2]);
      const int axis = u < area[0] ? 0 : (u < area[0] + area[1] ? 1 : 2);
      const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      for (int i = 0; i < 3; ++i) local[i] = p[i] * (2.0 * uniform01(rng) - 1.0);
      local[axis] = sign * p[axis];
      break;
    }
    case ShapeKind::torus: {
      for (;;) {
        const double u = 2.0 * kPi * uniform01(rng);
        const double v = 2.0 * kPi * uniform01(rng);
        if (uniform01(rng) * (p[0] + p[1]) > p[0] + p[1] * std::cos(v)) continue;
        const double ring = p[0] + p[1] * std::cos(v);
        local = {ring * std::cos(u), ring * std::sin(u), p[1] * std::sin(v)};
        break;
      }
      break;
    }
    case ShapeKind::ellipsoid: {
      const double a = p[0], b = p[1], c = p[2];
      const double g_max = std::max({b * c, a * c, a * b});
      for (;;) {
        const Vec3 u = random_unit(rng);
        const double g = std::sqrt(std::pow(b * c * u.x(), 2) + std::pow(a * c * u.y(), 2) +
                                   std::pow(a * b * u.z(), 2));
        if (uniform01(rng) * g_max > g) continue;
        local = {a * u.x(), b * u.y(), c * u.z()};
        break;
      }
      break;
    }
    case ShapeKind::csg_union: {
      const Point3 c2(0.0, 0.0, p[2]);
      for (;;) {
        const bool first = uniform01(rng) * (p[0] * p[0] + p[1] * p[1]) < p[0] * p[0];
        const Point3 candidate = first ? Point3(p[0] * random_unit(rng))
                                       : Point3(c2 + p[1] * random_unit(rng));
        if (first ? (candidate - c2).norm() < p[1] : candidate.norm() < p[0]) continue;
        local = candidate;
        break;
      }
      break;
    }
    case ShapeKind::csg_smooth_blend: {
      const auto& prof = *profile_;
      const double u = uniform01(rng);
      const auto it = std::lower_bound(prof.area_cdf.begin(), prof.area_cdf.end(), u);
      const auto j = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
          it - prof.area_cdf.begin(), static_cast<std::ptrdiff_t>(prof.area_cdf.size()) - 1));
      const double a = prof.alpha[j] + uniform01(rng) * (prof.alpha[j + 1] - prof.alpha[j]);
      const auto m = prof.point_at(a);
      const double phi = 2.0 * kPi * uniform01(rng);
      local = {m[0] * std::cos(phi), m[0] * std::sin(phi), m[1]};
      break;
    }
  }
  return {pose_.apply(local), (pose_.rotation * local_normal(local)).normalized()};
}

nlohmann::json ShapeOracle::to_json() const {
  nlohmann::json params = nlohmann::json::object();
  const auto& names = kParamNames[static_cast<std::size_t>(kind_)];
  for (std::size_t i = 0; i < names.size(); ++i) params[names[i]] = params_[i];
  std::vector<double> rotation;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rotation.push_back(pose_.rotation(r, c));
  return {{"kind", to_string(kind_)},
          {"params", params},
          {"pose",
           {{"rotation", rotation},
            {"translation", {pose_.translation.x(), pose_.translation.y(), pose_.translation.z()}},
            {"scale", pose_.scale}}}};
}

ShapeOracle ShapeOracle::from_json(const nlohmann::json& spec) {
  try {
    const ShapeKind kind = shape_kind_from_string(spec.at("kind").get<std::string>());
    const auto& names = kParamNames[static_cast<std::size_t>(kind)];
    const auto& params = spec.at("params");
    if (params.size() != names.size()) throw InvalidInput("wrong parameter count for " + to_string(kind));
    std::vector<double> v;
    for (const auto& n : names) v.push_back(params.at(n).get<double>());
    ShapeOracle shape = [&] {
      switch (kind) {
        case ShapeKind::sphere: return sphere(v[0]);
        case ShapeKind::box: return box(Vec3(v[0], v[1], v[2]));
        case ShapeKind::torus: return torus(v[0], v[1]);
        case ShapeKind::ellipsoid: return ellipsoid(Vec3(v[0], v[1], v[2]));
        case ShapeKind::csg_union: return csg_union(v[0], v[1], v[2]);
        case ShapeKind::csg_smooth_blend: return csg_smooth_blend(v[0], v[1], v[2], v[3]);
      }
      throw InvalidInput("unreachable shape kind");
    }();
    if (spec.contains("pose")) {
      const auto& pose = spec.at("pose");
      const auto rot = pose.at("rotation").get<std::vector<double>>();
      const auto tr = pose.at("translation").get<std::vector<double>>();
      if (rot.size() != 9 || tr.size() != 3) throw InvalidInput("malformed pose");
      Similarity sim;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) sim.rotation(r, c) = rot[3 * r + c];
      sim.translation = Vec3(tr[0], tr[1], tr[2]);
      sim.scale = pose.at("scale").get<double>();
      if (!(sim.scale > 0.0)) throw InvalidInput("pose scale must be positive");
      if (!(sim.rotation * sim.rotation.transpose()).isApprox(Mat3::Identity(), 1e-9))
        throw InvalidInput("pose rotation is not orthonormal");
      shape.pose_ = sim;
    }
    return shape;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("invalid shape spec: ") + e.what());
  }
}

std::vector<ShapeOracle> generate_shapes(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  std::vector<ShapeOracle> shapes;
  shapes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ShapeOracle shape = [&] {
      switch (i % 6) {
        case 0: return ShapeOracle::sphere(1.0);
        case 1: return ShapeOracle::box(Vec3(1.0, uni(0.45, 1.0), uni(0.45, 1.0)));
        case 2: return ShapeOracle::torus(1.0, uni(0.3, 0.45));
        case 3: return ShapeOracle::ellipsoid(Vec3(1.0, uni(0.55, 0.9), uni(0.4, 0.7)));
        case 4: {
          const double r2 = uni(0.55, 0.9);
          return ShapeOracle::csg_union(1.0, r2, 1.0 + r2 * uni(0.2, 0.6));
        }
        default: {
          const double r2 = uni(0.55, 0.9);
          return ShapeOracle::csg_smooth_blend(1.0, r2, 1.0 + r2 * uni(0.2, 0.6), uni(0.2, 0.4));
        }
      }
    }();
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize();
    Similarity rot;
    rot.rotation = q.toRotationMatrix();
    shapes.push_back(shape.posed(rot).normalized());
  }
  return shapes;
}

}  // namespace onsurf
