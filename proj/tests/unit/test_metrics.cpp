#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "onsurf/metrics.hpp"
#include "onsurf/reconstruct.hpp"

using namespace onsurf;

namespace {

SampledSurface random_surface(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  SampledSurface s;
  for (std::size_t i = 0; i < n; ++i) {
    s.points.push_back(scale * Point3(g(rng), g(rng), g(rng)));
    s.normals.push_back(Vec3(g(rng), g(rng), g(rng)).normalized());
  }
  return s;
}

SampledSurface scaled(SampledSurface s, double c) {
  for (auto& p : s.points) p *= c;
  return s;
}

// Brute-force nearest index, ties to the lowest index.
std::size_t nearest(const Point3& p, const SampledSurface& to) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < to.size(); ++j) {
    const double d = (p - to.points[j]).squaredNorm();
    if (d < bd) {
      bd = d;
      best = j;
    }
  }
  return best;
}

struct Oracle {
  double l1, l2, nc, f;
};

Oracle brute_force(const SampledSurface& a, const SampledSurface& b, double threshold) {
  auto one_way = [&](const SampledSurface& x, const SampledSurface& y, double& l1, double& l2, double& nc,
                     double& hit) {
    l1 = l2 = nc = hit = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t j = nearest(x.points[i], y);
      const double d = (x.points[i] - y.points[j]).norm();
      l1 += d;
      l2 += d * d;
      nc += std::abs(x.normals[i].dot(y.normals[j]));
      hit += d <= threshold ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(x.size());
    l1 /= n;
    l2 /= n;
    nc /= n;
    hit /= n;
  };
  double l1a, l2a, nca, pa, l1b, l2b, ncb, pb;
  one_way(a, b, l1a, l2a, nca, pa);
  one_way(b, a, l1b, l2b, ncb, pb);
  return {0.5 * (l1a + l1b), 0.5 * (l2a + l2b), 0.5 * (nca + ncb), pa + pb > 0 ? 2 * pa * pb / (pa + pb) : 0.0};
}

TriangleMesh unit_sphere_mesh(std::size_t res) {
  const Bounds box{Point3::Constant(-1.1), Point3::Constant(1.1)};
  return cleanup(marching_cubes(evaluate_grid([](const Point3& x) { return x.norm() - 1.0; }, box, res)), 1e-12);
}

}  // namespace

TEST_CASE("chamfer single pair and identity") {
  SampledSurface a, b;
  a.points = {Point3(0, 0, 0)};
  b.points = {Point3(1, 0, 0)};
  const ChamferDistance cd = chamfer(a, b);
  CHECK(cd.l1 == 1.0);
  CHECK(cd.l2 == 1.0);
  const SampledSurface r = random_surface(50, 1);
  const ChamferDistance self = chamfer(r, r);
  CHECK(self.l1 == 0.0);
  CHECK(self.l2 == 0.0);
  CHECK_THROWS_AS(chamfer(a, SampledSurface{}), InvalidInput);
}

TEST_CASE("metrics match a brute-force oracle") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const std::size_t n = seed < 2 ? 100 : 200;
    const SampledSurface a = random_surface(n, 10 + seed), b = random_surface(n + 17, 20 + seed);
    const double threshold = 0.3;
    const Oracle o = brute_force(a, b, threshold);
    const ChamferDistance cd = chamfer(a, b);
    CHECK(std::abs(cd.l1 - o.l1) <= 1e-12);
    CHECK(std::abs(cd.l2 - o.l2) <= 1e-12);
    CHECK(std::abs(normal_consistency(a, b) - o.nc) <= 1e-12);
    CHECK(std::abs(fscore(a, b, threshold) - o.f) <= 1e-12);
    const MetricsReport r = evaluate_surfaces(a, b, threshold);
    CHECK(std::abs(r.l1cd - o.l1) <= 1e-12);
    CHECK(std::abs(r.l2cd - o.l2) <= 1e-12);
    CHECK(std::abs(r.nc - o.nc) <= 1e-12);
    CHECK(std::abs(r.fscore - o.f) <= 1e-12);
  }
}

TEST_CASE("metrics are symmetric") {
  const SampledSurface a = random_surface(150, 3), b = random_surface(90, 4);
  CHECK(chamfer(a, b).l1 == doctest::Approx(chamfer(b, a).l1).epsilon(1e-14));
  CHECK(chamfer(a, b).l2 == doctest::Approx(chamfer(b, a).l2).epsilon(1e-14));
  CHECK(normal_consistency(a, b) == doctest::Approx(normal_consistency(b, a)).epsilon(1e-14));
  CHECK(fscore(a, b, 0.2) == doctest::Approx(fscore(b, a, 0.2)).epsilon(1e-14));
}

TEST_CASE("metrics scale covariance") {
  const SampledSurface a = random_surface(120, 5), b = random_surface(130, 6);
  const double c = 3.0;
  const SampledSurface ac = scaled(a, c), bc = scaled(b, c);
  CHECK(chamfer(ac, bc).l1 == doctest::Approx(c * chamfer(a, b).l1).epsilon(1e-12));
  CHECK(chamfer(ac, bc).l2 == doctest::Approx(c * c * chamfer(a, b).l2).epsilon(1e-12));
  CHECK(normal_consistency(ac, bc) == doctest::Approx(normal_consistency(a, b)).epsilon(1e-12));
  CHECK(fscore(ac, bc, c * 0.25) == doctest::Approx(fscore(a, b, 0.25)).epsilon(1e-12));
}

TEST_CASE("normal consistency extremes") {
  SampledSurface a = random_surface(80, 7);
  CHECK(normal_consistency(a, a) == doctest::Approx(1.0).epsilon(1e-14));
  SampledSurface flipped = a;
  for (auto& n : flipped.normals) n = -n;
  CHECK(normal_consistency(a, flipped) == doctest::Approx(1.0).epsilon(1e-14));
  SampledSurface rotated = a;
  for (auto& n : rotated.normals) n = n.unitOrthogonal();
  CHECK(std::abs(normal_consistency(a, rotated)) <= 1e-12);
  SampledSurface bare = a;
  bare.normals.clear();
  CHECK_THROWS_AS(normal_consistency(a, bare), InvalidInput);
}

TEST_CASE("fscore extremes") {
  const SampledSurface a = random_surface(60, 8);
  CHECK(fscore(a, a, 1e-9) == 1.0);
  SampledSurface far = a;
  for (auto& p : far.points) p += Vec3(100, 0, 0);
  CHECK(fscore(a, far, 1.0) == 0.0);
  CHECK_THROWS_AS(fscore(a, a, 0.0), InvalidInput);
  CHECK(kShapeFscoreThreshold == 0.001);
  CHECK(kEvalSamples == 100000);
}

TEST_CASE("sample_mesh on a single triangle") {
  TriangleMesh m;
  m.vertices = {Point3(0, 0, 0), Point3(2, 0, 0), Point3(0, 1, 1)};
  m.faces = {{0, 1, 2}};
  const SampledSurface s = sample_mesh(m, 2000, 9);
  REQUIRE(s.size() == 2000);
  const Vec3 normal = m.face_normal(0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    // Barycentric coordinates in the triangle's plane.
    const Vec3 p = s.points[i];
    CHECK(std::abs(p.dot(normal)) <= 1e-12);
    const double u = p.x() / 2.0 - 0.0, v = p.y();
    CHECK(u >= -1e-12);
    CHECK(v >= -1e-12);
    CHECK(u + v <= 1.0 + 1e-12);
    CHECK(s.normals[i] == normal);
  }
  CHECK_THROWS_AS(sample_mesh(TriangleMesh{}, 10, 0), InvalidInput);
}

TEST_CASE("sample_mesh is deterministic and area-weighted") {
  const TriangleMesh sphere = unit_sphere_mesh(64);
  const SampledSurface s = sample_mesh(sphere, 100000, 12);
  Point3 centroid = Point3::Zero();
  for (const auto& p : s.points) centroid += p;
  centroid /= static_cast<double>(s.size());
  CHECK(centroid.norm() < 0.01);
  const SampledSurface again = sample_mesh(sphere, 100000, 12);
  CHECK(again.points == s.points);
  CHECK(again.normals == s.normals);

  // Two triangles with area ratio 1:3.
  TriangleMesh m;
  m.vertices = {Point3(0, 0, 0), Point3(1, 0, 0), Point3(0, 1, 0), Point3(10, 0, 0), Point3(13, 0, 0),
                Point3(10, 1, 0)};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  const SampledSurface two = sample_mesh(m, 40000, 13);
  std::size_t right = 0;
  for (const auto& p : two.points) right += p.x() >= 10.0;
  CHECK(static_cast<double>(right) / 40000.0 == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("sphere mesh against the oracle sphere scores well") {
  const SampledSurface mesh_s = sample_mesh(unit_sphere_mesh(64), 20000, 1);
  const SampledSurface ref = sample_oracle(ShapeOracle::sphere(1.0), 20000, 2);
  CHECK(ref.source == SurfaceSource::oracle);
  const MetricsReport r = evaluate_surfaces(mesh_s, ref, 0.025);
  CHECK(r.l1cd < 0.02);
  CHECK(r.nc > 0.99);
  CHECK(r.fscore > 0.95);
  for (const auto& n : ref.normals) CHECK(std::abs(n.norm() - 1.0) < 1e-6);
}

TEST_CASE("metrics report JSON carries display fields and round trips") {
  MetricsReport r;
  r.l1cd = 0.0123;
  r.l2cd = 0.000456;
  r.nc = 0.9;
  r.fscore = 0.5;
  r.threshold = 0.025;
  r.reconstruction_samples = 7;
  r.reference_samples = 8;
  r.reconstruction_seed = 1;
  r.reference_seed = 2;
  const auto j = r.to_json();
  CHECK(j.at("l1cd_x10").get<double>() == doctest::Approx(0.123));
  CHECK(j.at("l2cd_x1000").get<double>() == doctest::Approx(0.456));
  const MetricsReport back = MetricsReport::from_json(j);
  CHECK(back.l1cd == r.l1cd);
  CHECK(back.nc == r.nc);
  CHECK(back.reference_seed == 2);
  CHECK_THROWS_AS(MetricsReport::from_json(nlohmann::json{{"l1cd", 1}}), InvalidInput);
}
