#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "doctest.h"
#include "onsurf/patch.hpp"
#include "onsurf/prior.hpp"
#include "onsurf/sampling.hpp"

using namespace onsurf;

namespace {

PriorConfig small_config() {
  PriorConfig c;
  c.k = 8;
  c.queries_per_shape = 400;
  c.hidden_dim = 32;
  c.num_layers = 4;
  c.epochs = 10;
  c.batch_size = 64;
  c.seed = 3;
  return c;
}

std::vector<ShapeOracle> two_shapes() {
  return {ShapeOracle::sphere(1.0).normalized(), ShapeOracle::box(Vec3(1.0, 0.6, 0.45)).normalized()};
}

std::filesystem::path temp_dir(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("onsurf_prior_" + std::to_string(::getpid()) + "_" + name);
}

struct TrainedSpherePrior {
  PriorModel model;
  PriorTrainingLog log;
};

// Same surface density as 500 points on a normalized shape.
constexpr std::size_t kSphereCloudSize = 1500;

// Default-config prior on a unit-sphere corpus, trained once and shared by
// the post-training checks.
const TrainedSpherePrior& sphere_prior() {
  static const TrainedSpherePrior trained = [] {
    PriorConfig c;
    c.seed = 11;
    const std::vector<ShapeOracle> corpus(5, ShapeOracle::sphere(1.0));
    const auto ds = build_prior_dataset(corpus, kSphereCloudSize, c);
    TrainedSpherePrior t;
    t.model = train_prior(ds, c, &t.log);
    return t;
  }();
  return trained;
}

PointCloud sphere_cloud() { return sample_surface(ShapeOracle::sphere(1.0), kSphereCloudSize, 77); }

}  // namespace

TEST_CASE("labels: distance clamp, binary threshold, signed clamp") {
  const ShapeOracle sphere = ShapeOracle::sphere(1.0);
  PriorConfig c;
  CHECK(prior_label(sphere, Point3(1, 0, 0), c) == 0.0);
  CHECK(prior_label(sphere, Point3(3, 0, 0), c) == 0.2);
  CHECK(prior_label(sphere, Point3(0, 1.05, 0), c) == doctest::Approx(0.05));
  CHECK(prior_label(sphere, Point3(0, 0, 0.9), c) == doctest::Approx(0.1));
  c.label_mode = LabelMode::binary;
  CHECK(prior_label(sphere, Point3(0, 0, 1.005), c) == 1.0);
  CHECK(prior_label(sphere, Point3(0, 0, 1.02), c) == 0.0);
  c.label_mode = LabelMode::signed_distance;
  CHECK(prior_label(sphere, Point3(0, 0, 0.9), c) == doctest::Approx(-0.1));
  CHECK(prior_label(sphere, Point3(0, 0, 0), c) == -0.2);
  CHECK(prior_label(sphere, Point3(0, 5, 0), c) == 0.2);
  CHECK(label_mode_from_string("signed") == LabelMode::signed_distance);
  CHECK_THROWS_AS(label_mode_from_string("sdf"), InvalidInput);
}

TEST_CASE("dataset records: layout, patches and labels") {
  const auto shapes = two_shapes();
  const PriorConfig c = small_config();
  const PriorDataset ds = build_prior_dataset(shapes, 100, c);
  REQUIRE(ds.size() == 800);
  CHECK(ds.record_size() == 36);
  CHECK(ds.manifest.at("shapes").size() == 2);

  std::size_t near = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ShapeOracle& shape = shapes[i / 400];
    const Point3 p = ds.probe(i);
    const float label = ds.label(i);
    CHECK(label >= 0.0f);
    CHECK(label <= 0.2f);
    CHECK(std::abs(label - prior_label(shape, p, c)) <= 1e-6);
    near += label < 0.2f;
    const float* r = ds.record(i);
    for (std::size_t j = 0; j < c.k; ++j) {
      const Vec3 rel(r[3 + 3 * j], r[4 + 3 * j], r[5 + 3 * j]);
      CHECK(std::abs(rel.norm() - r[3 + 3 * c.k + j]) <= 1e-6);
      if (j > 0) CHECK(r[3 + 3 * c.k + j] >= r[3 + 3 * c.k + j - 1]);
    }
  }
  // 80% of probes sit close to the surface.
  CHECK(static_cast<double>(near) / 800.0 > 0.8);
}

TEST_CASE("dataset neighbors come from the shape's sparse cloud") {
  const auto shapes = two_shapes();
  const PriorConfig c = small_config();
  const PriorDataset ds = build_prior_dataset(shapes, 100, c);
  const std::uint64_t seed = ds.manifest.at("shapes")[1].at("seed").get<std::uint64_t>();
  const PointCloud cloud = sample_surface(shapes[1], 100, derive_seed(seed, "sparse"));
  const KnnIndex index(cloud);
  for (std::size_t i = 400; i < 420; ++i) {
    const float* r = ds.record(i);
    for (std::size_t j = 0; j < c.k; ++j) {
      const Point3 neighbor = ds.probe(i) + Vec3(r[3 + 3 * j], r[4 + 3 * j], r[5 + 3 * j]);
      CHECK(index.nearest(neighbor).distance <= 1e-5);
    }
  }
}

TEST_CASE("labels agree with a dense oracle sampling") {
  const ShapeOracle shape = ShapeOracle::torus(1.0, 0.35).normalized();
  const PointCloud dense = sample_surface(shape, 100000, 5);
  const KnnIndex index(dense);
  // Sampling spacing sqrt(area / n): twice the mean nearest-neighbor
  // distance of a uniform random sample.
  double spacing = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) spacing += index.query(dense[i], 2)[1].distance;
  spacing *= 2.0 / 1000.0;
  PriorConfig c;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    const Point3 p(u(rng), u(rng), 0.5 * u(rng));
    const double sampled = std::min(index.nearest(p).distance, c.label_clamp);
    CHECK(std::abs(prior_label(shape, p, c) - sampled) <= 2.0 * spacing);
  }
}

TEST_CASE("dataset build validation") {
  PriorConfig c = small_config();
  CHECK_THROWS_AS(build_prior_dataset({}, 100, c), InvalidInput);
  CHECK_THROWS_AS(build_prior_dataset(two_shapes(), 5, c), InvalidInput);
  c.k = 3;
  CHECK_THROWS_AS(build_prior_dataset(two_shapes(), 100, c), ConfigError);
  c = small_config();
  c.near_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.label_clamp = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("dataset build is deterministic and round trips through disk") {
  const PriorConfig c = small_config();
  const PriorDataset a = build_prior_dataset(two_shapes(), 100, c);
  const PriorDataset b = build_prior_dataset(two_shapes(), 100, c);
  CHECK(a.records == b.records);
  const auto dir = temp_dir("ds");
  save_prior_dataset(a, dir);
  const PriorDataset back = load_prior_dataset(dir);
  CHECK(back.records == a.records);
  CHECK(back.k == a.k);
  CHECK(back.label_mode == a.label_mode);
  std::filesystem::resize_file(dir / "samples.f32", 100);
  CHECK_THROWS_AS(load_prior_dataset(dir), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training loss decreases and training is deterministic") {
  const PriorConfig c = small_config();
  const PriorDataset ds = build_prior_dataset(two_shapes(), 100, c);
  PriorTrainingLog log;
  const PriorModel a = train_prior(ds, c, &log);
  REQUIRE(log.epoch_loss.size() == 10);
  for (std::size_t e = 1; e < 10; ++e) CHECK_MESSAGE(log.epoch_loss[e] < log.epoch_loss[e - 1], "epoch " << e);
  const PriorModel b = train_prior(ds, c);
  CHECK(a.network == b.network);
  CHECK(a.k == 8);

  const auto path = temp_dir("model.osrf");
  a.save(path, {{"note", "test"}});
  const PriorModel back = PriorModel::from_file(path);
  CHECK(back.network == a.network);
  CHECK(back.label_mode == a.label_mode);
  std::filesystem::remove(path);

  PriorConfig wrong = c;
  wrong.k = 10;
  CHECK_THROWS_AS(train_prior(ds, wrong), InvalidInput);
  CHECK_THROWS_AS(train_prior(PriorDataset{}, c), InvalidInput);
}

TEST_CASE("all-zero labels train to a near-zero output") {
  PriorConfig c = small_config();
  c.epochs = 20;
  PriorDataset ds = build_prior_dataset(two_shapes(), 100, c);
  for (std::size_t i = 0; i < ds.size(); ++i) ds.records[i * ds.record_size() + ds.record_size() - 1] = 0.0f;
  const PriorModel m = train_prior(ds, c);
  const VectorX out = forward(m.network, dataset_inputs(ds, c.normalization, 0, ds.size()));
  CHECK(std::abs(out.mean()) <= 1e-3);
}

TEST_CASE("prior evaluation is invariant to translating cloud and probe together") {
  const PriorModel m = train_prior(build_prior_dataset(two_shapes(), 100, small_config()), [] {
    auto c = small_config();
    c.epochs = 1;
    return c;
  }());
  // Dyadic coordinates with an integer shift keep every subtraction exact.
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(-64, 64);
  std::vector<Point3> pts(40);
  for (auto& p : pts) p = Point3(u(rng), u(rng), u(rng)) / 64.0;
  const Vec3 shift(3.0, -2.0, 5.0);
  std::vector<Point3> moved = pts;
  for (auto& p : moved) p += shift;
  const KnnIndex a((PointCloud(pts))), b((PointCloud(moved)));
  for (int i = 0; i < 20; ++i) {
    const Point3 probe = Point3(u(rng), u(rng), u(rng)) / 128.0;
    CHECK(eval_prior(m, a, probe) == eval_prior(m, b, probe + shift));
  }
  // General shifts agree to rounding.
  const Vec3 odd(0.1234567, -0.7654321, 0.333);
  std::vector<Point3> moved_odd = pts;
  for (auto& p : moved_odd) p += odd;
  const KnnIndex c((PointCloud(moved_odd)));
  const Point3 probe(0.1, 0.2, -0.3);
  CHECK(eval_prior(m, a, probe) == doctest::Approx(eval_prior(m, c, probe + odd)).epsilon(1e-12));

  CHECK_THROWS_AS(eval_prior(m, KnnIndex(std::vector<Point3>(pts.begin(), pts.begin() + 5)), probe), InvalidInput);
  PriorModel mismatched = m;
  mismatched.k = 9;
  CHECK_THROWS_AS(eval_prior(mismatched, a, probe), InvalidInput);
}

TEST_CASE("patch encoding pullback matches finite differences for every normalization") {
  const PointCloud cloud = sample_surface(ShapeOracle::ellipsoid(Vec3(1.0, 0.7, 0.5)), 200, 8);
  const KnnIndex index(cloud);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  for (const char* name : {"trans", "rot", "trans_rot", "none"}) {
    const PatchNormalization n = patch_normalization_from_string(name);
    CHECK(to_string(n) == name);
    const std::size_t k = 10;
    const std::size_t dim = encoded_patch_dim(k, n);
    CHECK(dim == 3 * k + (n.translate ? 0 : 3));
    for (int trial = 0; trial < 5; ++trial) {
      const Point3 probe(0.8 * g(rng), 0.5 * g(rng), 0.4 * g(rng));
      const LocalPatch patch = extract_patch(index, probe, k);
      std::vector<double> weights(dim);
      for (auto& w : weights) w = g(rng);
      const Vec3 pull = encoded_patch_pullback(index, probe, patch, n, weights.data());
      std::vector<double> enc(dim);
      auto objective = [&](const Point3& p) {
        // Neighbor selection held fixed: re-express the same points relative to p.
        std::vector<Vec3> rel;
        for (auto id : patch.indices) rel.push_back(cloud[id] - p);
        encode_relative_patch(p, rel, n, enc.data());
        double s = 0.0;
        for (std::size_t i = 0; i < dim; ++i) s += weights[i] * enc[i];
        return s;
      };
      const double h = 1e-6;
      for (int a = 0; a < 3; ++a) {
        Point3 hi = probe, lo = probe;
        hi[a] += h;
        lo[a] -= h;
        const double fd = (objective(hi) - objective(lo)) / (2 * h);
        CHECK_MESSAGE(std::abs(pull[a] - fd) <= 1e-6 * (1.0 + std::abs(fd)), name << " axis " << a);
      }
    }
  }
  CHECK_THROWS_AS(patch_normalization_from_string("scale"), InvalidInput);
}

TEST_CASE("sphere prior: loss curve and held-out accuracy") {
  const TrainedSpherePrior& t = sphere_prior();
  REQUIRE(t.log.epoch_loss.size() == PriorConfig{}.epochs);
  for (std::size_t e = 1; e < 10; ++e) CHECK_MESSAGE(t.log.epoch_loss[e] < t.log.epoch_loss[e - 1], "epoch " << e);

  PriorConfig held_cfg;
  held_cfg.queries_per_shape = 5000;
  held_cfg.seed = 99;
  const PriorDataset held = build_prior_dataset({ShapeOracle::sphere(1.0)}, kSphereCloudSize, held_cfg);
  const VectorX pred = forward(t.model.network, dataset_inputs(held, t.model.normalization, 0, held.size()));
  double err = 0.0;
  for (std::size_t i = 0; i < held.size(); ++i) err += std::abs(pred[static_cast<Eigen::Index>(i)] - held.label(i));
  CHECK(err / static_cast<double>(held.size()) < 0.02);
}

TEST_CASE("sphere prior: on-surface, far-field and classification checks") {
  const PriorModel& m = sphere_prior().model;
  const PointCloud cloud = sphere_cloud();
  const KnnIndex index(cloud);

  double on = 0.0;
  for (std::size_t i = 0; i < 50; ++i) on += eval_prior(m, index, cloud[i * 10]);
  CHECK(on / 50.0 < 0.01);

  for (const Point3& far : {Point3(1.6, 0, 0), Point3(0, -1.5, 0.3), Point3(-1, -1, 1)}) {
    CHECK(std::abs(eval_prior(m, index, far) - 0.2) <= 0.25 * 0.2);
  }

  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Point3> at_surface, off_surface;
  for (int i = 0; i < 300; ++i) {
    const Vec3 dir = Vec3(g(rng), g(rng), g(rng)).normalized();
    at_surface.push_back(dir);
    off_surface.push_back(0.9 * dir);
    off_surface.push_back(1.1 * dir);
  }
  const auto kept_on = classify_on_surface(m, index, at_surface, 0.03);
  const auto kept_off = classify_on_surface(m, index, off_surface, 0.03);
  CHECK(static_cast<double>(kept_on.size()) >= 0.95 * 300.0);
  CHECK(static_cast<double>(kept_off.size()) <= 0.05 * 600.0);

  CHECK(classify_on_surface(m, index, at_surface, 0.0).size() <= 3);
  CHECK(classify_on_surface(m, index, off_surface, 0.2).size() >= 0.99 * 600.0);
}
