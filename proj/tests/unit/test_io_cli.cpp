#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "doctest.h"
#include "onsurf/cloud_io.hpp"
#include "onsurf/model_io.hpp"
#include "onsurf/pipeline.hpp"
#include "onsurf/sampling.hpp"

using namespace onsurf;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& name)
      : path(fs::temp_directory_path() / ("onsurf_io_" + std::to_string(::getpid()) + "_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& f) const { return path / f; }
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Small enough to fit and reconstruct in about a second.
RunConfig tiny_config() {
  json j = {{"seed", 5},
            {"corpus", {{"train_shapes", 2}, {"test_shapes", 2}, {"points", 120}, {"dense_points", 300}}},
            {"prior", {{"k", 8}, {"hidden_dim", 16}, {"num_layers", 3}, {"epochs", 1}, {"queries_per_shape", 200}}},
            {"fit", {{"k", 8}, {"hidden_dim", 16}, {"num_layers", 3}, {"iterations", 40}, {"batch_size", 128},
                     {"queries_per_point", 2}, {"sigma_neighbor", 8}}},
            {"reconstruct", {{"resolution", 24}}},
            {"eval", {{"reconstruction_samples", 2000}, {"reference_samples", 2000}}}};
  return RunConfig::from_json(j);
}

PointCloud small_cloud(bool normals) {
  PointCloud c = sample_surface(ShapeOracle::torus(0.6, 0.2), 64, 3);
  return normals ? c : PointCloud(c.points());
}

}  // namespace

TEST_CASE("xyz clouds round trip exactly") {
  ScratchDir dir("xyz");
  for (bool normals : {false, true}) {
    const PointCloud c = small_cloud(normals);
    write_xyz(c, dir / "c.xyz");
    CHECK(read_xyz(dir / "c.xyz") == c);
  }
}

TEST_CASE("xyz reader skips comments and rejects ragged files") {
  ScratchDir dir("xyz_bad");
  write_text(dir / "a.xyz", "# header\n\n1 2 3\n  # indented comment\n4 5 6\n");
  const PointCloud a = read_xyz(dir / "a.xyz");
  REQUIRE(a.size() == 2);
  CHECK(a[1] == Point3(4, 5, 6));
  CHECK(!a.has_normals());

  write_text(dir / "b.xyz", "1 2 3\n4 5 6 0 0 1\n");
  CHECK_THROWS_AS(read_xyz(dir / "b.xyz"), FormatError);
  write_text(dir / "c.xyz", "1 2 x\n");
  CHECK_THROWS_AS(read_xyz(dir / "c.xyz"), FormatError);
  write_text(dir / "d.xyz", "1 2\n");
  CHECK_THROWS_AS(read_xyz(dir / "d.xyz"), FormatError);
  write_text(dir / "e.xyz", "1 2 nan\n");
  CHECK_THROWS_AS(read_xyz(dir / "e.xyz"), FormatError);
}

TEST_CASE("ply clouds round trip exactly") {
  ScratchDir dir("ply");
  for (bool normals : {false, true}) {
    const PointCloud c = small_cloud(normals);
    write_cloud(c, dir / "c.ply");
    CHECK(read_cloud(dir / "c.ply") == c);
  }
  CHECK_THROWS_AS(write_cloud(small_cloud(false), dir / "c.pcd"), InvalidInput);
  CHECK_THROWS_AS(read_cloud(dir / "c.pcd"), InvalidInput);
}

TEST_CASE("ply cloud reader handles ascii, other scalar types and extra elements") {
  ScratchDir dir("ply_ascii");
  write_text(dir / "a.ply",
             "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\nproperty float x\nproperty float y\n"
             "property float z\nproperty uchar red\nproperty float nx\nproperty float ny\nproperty float nz\n"
             "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
             "0 0 0 255 0 0 1\n1 0 0 0 0 0 1\n0 1.5 0 9 0 0 1\n3 0 1 2\n");
  const PointCloud a = read_ply_cloud(dir / "a.ply");
  REQUIRE(a.size() == 3);
  CHECK(a[2] == Point3(0, 1.5, 0));
  REQUIRE(a.has_normals());
  CHECK(a.normals()[0] == Vec3(0, 0, 1));

  // Binary with a list element ahead of the vertices.
  std::string bin = "ply\nformat binary_little_endian 1.0\nelement tag 1\nproperty list uchar short ids\n"
                    "element vertex 2\nproperty int x\nproperty int y\nproperty int z\nend_header\n";
  const unsigned char count = 2;
  const std::int16_t ids[2] = {7, 8};
  const std::int32_t xyz[6] = {1, 2, 3, -4, 5, 6};
  bin.append(reinterpret_cast<const char*>(&count), 1);
  bin.append(reinterpret_cast<const char*>(ids), sizeof ids);
  bin.append(reinterpret_cast<const char*>(xyz), sizeof xyz);
  write_text(dir / "b.ply", bin);
  const PointCloud b = read_ply_cloud(dir / "b.ply");
  REQUIRE(b.size() == 2);
  CHECK(b[1] == Point3(-4, 5, 6));

  write_text(dir / "c.ply", bin.substr(0, bin.size() - 2));
  CHECK_THROWS_AS(read_ply_cloud(dir / "c.ply"), FormatError);
  write_text(dir / "d.ply", bin + "x");
  CHECK_THROWS_AS(read_ply_cloud(dir / "d.ply"), FormatError);
  write_text(dir / "e.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n");
  CHECK_THROWS_AS(read_ply_cloud(dir / "e.ply"), FormatError);
  write_text(dir / "f.ply", "ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n");
  CHECK_THROWS_AS(read_ply_cloud(dir / "f.ply"), FormatError);
}

TEST_CASE("run config defaults and validation") {
  const RunConfig d = RunConfig::from_json(json::object());
  CHECK(d.fit.lambda == 0.4);
  CHECK(d.corpus.train_shapes == 10);
  CHECK(d.corpus.test_shapes == 10);
  CHECK(d.corpus.points == 500);
  CHECK(d.eval.threshold == 0.001);
  CHECK(d.reconstruct.resolution == 128);

  CHECK_THROWS_AS(RunConfig::from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"fit", {{"lamda", 0.4}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"corpus", {{"points", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"fit", {{"seed", 3}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"prior", {{"label_mode", "fuzzy"}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"reconstruct", {{"resolution", 4}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"eval", {{"threshold", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"corpus", {{"noise", 0.2}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::array()), ConfigError);

  try {
    RunConfig::from_json({{"prior", {{"k", 25}}}});
    FAIL("k mismatch accepted");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("25") != std::string::npos);
    CHECK(msg.find("50") != std::string::npos);
  }
}

TEST_CASE("run config json round trip preserves the hash") {
  const RunConfig a = tiny_config();
  const RunConfig b = RunConfig::from_json(a.to_json());
  CHECK(b.to_json() == a.to_json());
  CHECK(b.hash() == a.hash());
  RunConfig c = a;
  c.fit.lambda = 0.2;
  CHECK(c.hash() != a.hash());
  CHECK(a.seeded_fit("x").seed != a.seeded_fit("y").seed);
  CHECK(a.seeded_prior().seed == b.seeded_prior().seed);
}

TEST_CASE("prior config json rejects unknown keys") {
  const PriorConfig p = PriorConfig::from_json({{"k", 25}, {"label_mode", "binary"}, {"normalization", "trans_rot"}});
  CHECK(p.k == 25);
  CHECK(p.label_mode == LabelMode::binary);
  CHECK(p.normalization == PatchNormalization{true, true});
  CHECK(PriorConfig::from_json(p.to_json()).to_json() == p.to_json());
  CHECK_THROWS_AS(PriorConfig::from_json({{"kk", 3}}), ConfigError);
}

TEST_CASE("file digests and manifests") {
  ScratchDir dir("manifest");
  write_text(dir / "abc.txt", "abc");
  CHECK(file_sha256(dir / "abc.txt") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  RunManifest m("test", tiny_config());
  m.add_input(dir / "abc.txt");
  m.add_timing("stage", 1.5);
  m.set("note", "x");
  m.write(dir / "m.json");
  std::ifstream in(dir / "m.json");
  const json j = json::parse(in);
  CHECK(j.at("command") == "test");
  CHECK(j.at("config_hash") == tiny_config().hash());
  CHECK(j.at("inputs").at((dir / "abc.txt").string()) == file_sha256(dir / "abc.txt"));
  CHECK(j.at("note") == "x");
  CHECK(j.at("tool_version") == kToolVersion);
}

TEST_CASE("default corpus has ten train and ten test shapes of 500 points") {
  const RunConfig cfg = RunConfig::from_json(json::object());
  const auto train = corpus_shapes(cfg, "train");
  const auto test = corpus_shapes(cfg, "test");
  CHECK(train.size() == 10);
  CHECK(test.size() == 10);
  CHECK(corpus_cloud(cfg, test[0]).size() == 500);
  CHECK(test[3].key() == "test/shape_03");
  CHECK(!(train[0].shape.to_json() == test[0].shape.to_json()));

  RunConfig dense = cfg;
  dense.corpus.points = 2000;
  CHECK(corpus_cloud(dense, test[0]).size() == 2000);
}

TEST_CASE("gen-corpus is byte-identical across runs") {
  ScratchDir a("corpus_a"), b("corpus_b");
  std::ostringstream log;
  const RunConfig cfg = tiny_config();
  cmd_gen_corpus(cfg, a.path, log);
  cmd_gen_corpus(cfg, b.path, log);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.path)) {
    if (!entry.is_regular_file() || entry.path().filename() == "run_manifest.json") continue;
    const fs::path rel = fs::relative(entry.path(), a.path);
    CHECK(file_bytes(entry.path()) == file_bytes(b.path / rel));
    ++files;
  }
  CHECK(files == 1 + 4 * 3);

  const auto test = load_corpus(a.path, "test");
  REQUIRE(test.size() == 2);
  CHECK(test[1].shape.to_json() == corpus_shapes(cfg, "test")[1].shape.to_json());
  const PointCloud sparse = read_cloud(test[1].cloud_path(a.path));
  CHECK(sparse == corpus_cloud(cfg, test[1]));
  const PointCloud dense = read_cloud(test[1].dense_path(a.path));
  CHECK(dense.size() == 300);
  CHECK(dense.has_normals());
  CHECK_THROWS_AS(load_corpus(a.path / "nowhere", "test"), InvalidInput);
}

TEST_CASE("ablation axes and cells") {
  CHECK(ablation_candidates("lambda") == std::vector<std::string>{"0", "0.2", "0.4", "0.6"});
  CHECK(ablation_candidates("k") == std::vector<std::string>{"25", "50", "100", "200"});
  CHECK(ablation_candidates("noise") == std::vector<std::string>{"0", "0.005", "0.01"});
  CHECK(ablation_candidates("density") == std::vector<std::string>{"250", "500", "1000", "2000"});
  CHECK(ablation_candidates("prior_mode").size() == 3);
  CHECK(ablation_candidates("normalization").size() == 4);
  CHECK_THROWS_AS(ablation_candidates("width"), ConfigError);

  const RunConfig base = RunConfig::from_json(json::object());
  CHECK(ablation_cell_config(base, "lambda", "0.6").fit.lambda == 0.6);
  const RunConfig k = ablation_cell_config(base, "k", "100");
  CHECK(k.prior.k == 100);
  CHECK(k.fit.k == 100);
  CHECK(ablation_cell_config(base, "noise", "0.01").corpus.noise == 0.01);
  CHECK(ablation_cell_config(base, "prior_mode", "binary").prior.label_mode == LabelMode::binary);
  CHECK(ablation_cell_config(base, "normalization", "none").prior.normalization == PatchNormalization{false, false});
  CHECK_THROWS_AS(ablation_cell_config(base, "lambda", "0.3"), ConfigError);
}

TEST_CASE("fit and reconstruct commands are deterministic") {
  ScratchDir dir("fit");
  const RunConfig cfg = tiny_config();
  std::ostringstream log;
  cmd_gen_corpus(cfg, dir.path, log);
  const auto shape = load_corpus(dir.path, "test")[0];

  FitCommand fit{shape.cloud_path(dir.path), {}, shape.spec_path(dir.path), dir / "a.osrf", {}};
  cmd_fit(cfg, fit, log);
  fit.out_model = dir / "b.osrf";
  cmd_fit(cfg, fit, log);
  CHECK(file_bytes(dir / "a.osrf") == file_bytes(dir / "b.osrf"));
  CHECK(fs::exists(dir / "a.fit.json"));
  CHECK(fs::exists(dir / "a.osrf.manifest.json"));

  CHECK(cmd_reconstruct(cfg, dir / "a.osrf", dir / "a.ply", log));
  CHECK(cmd_reconstruct(cfg, dir / "b.osrf", dir / "b.ply", log));
  CHECK(file_bytes(dir / "a.ply") == file_bytes(dir / "b.ply"));
  CHECK(!read_mesh(dir / "a.ply").empty());

  std::ifstream in(dir / "a.fit.json");
  const json report = json::parse(in);
  CHECK(report.at("lambda") == 0.4);
  CHECK(report.at("regularization") == "on");
  CHECK(report.at("prior") == "oracle");
  CHECK(report.at("loss_history").size() == 2);  // iterations 0 and 39
  CHECK(log.str().find("lambda: 0.4") != std::string::npos);
}

TEST_CASE("fit with lambda 0 is flagged in the report") {
  ScratchDir dir("fit_l0");
  RunConfig cfg = tiny_config();
  cfg.fit.lambda = 0.0;
  std::ostringstream log;
  cmd_gen_corpus(cfg, dir.path, log);
  const auto shape = load_corpus(dir.path, "test")[1];
  cmd_fit(cfg, {shape.cloud_path(dir.path), {}, shape.spec_path(dir.path), dir / "m.osrf", dir / "r.json"}, log);
  std::ifstream in(dir / "r.json");
  CHECK(json::parse(in).at("regularization") == "off");
  CHECK(log.str().find("regularization: off") != std::string::npos);
}

TEST_CASE("fit rejects a prior trained with a different k") {
  ScratchDir dir("fit_k");
  const RunConfig cfg = tiny_config();
  std::ostringstream log;
  cmd_gen_corpus(cfg, dir.path, log);
  PriorModel prior;
  prior.k = 12;
  MlpArchitecture arch;
  arch.input_dim = encoded_patch_dim(12, prior.normalization);
  arch.hidden_dim = 8;
  arch.num_layers = 3;
  arch.skip_layer = 1;
  prior.network = init_model(arch, InitMode::uniform, 1);
  prior.save(dir / "p.osrf");
  const auto shape = load_corpus(dir.path, "test")[0];
  try {
    cmd_fit(cfg, {shape.cloud_path(dir.path), dir / "p.osrf", {}, dir / "m.osrf", {}}, log);
    FAIL("k mismatch accepted");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("k = 12") != std::string::npos);
    CHECK(msg.find("k = 8") != std::string::npos);
  }
  CHECK(!fs::exists(dir / "m.osrf"));
}

TEST_CASE("reconstruct writes a valid empty mesh when the level set misses the grid") {
  ScratchDir dir("empty");
  MlpArchitecture arch;
  arch.hidden_dim = 16;
  arch.num_layers = 3;
  arch.skip_layer = 1;
  const MlpModel sphere = init_model(arch, InitMode::geometric_sphere, 2);
  save_model(sphere, dir / "m.osrf",
             {{"role", "sdf"}, {"cloud_bounds", {{"min", {5.0, 5.0, 5.0}}, {"max", {6.0, 6.0, 6.0}}}}});
  std::ostringstream log;
  CHECK(!cmd_reconstruct(tiny_config(), dir / "m.osrf", dir / "m.ply", log));
  CHECK(log.str().find("warning") != std::string::npos);
  CHECK(read_mesh(dir / "m.ply").empty());
  CHECK_THROWS_AS(cmd_eval(tiny_config(), dir / "m.ply", dir / "m.ply", dir / "r.json", log), InvalidInput);
}

TEST_CASE("eval of a mesh against its own samples") {
  ScratchDir dir("eval");
  const TriangleMesh mesh =
      cleanup(marching_cubes(evaluate_grid([](const Point3& x) { return x.norm() - 0.8; },
                                           {Point3::Constant(-1), Point3::Constant(1)}, 48)),
              1e-12);
  write_mesh(mesh, dir / "s.ply");
  const std::size_t n = kEvalSamples;
  const SampledSurface samples = sample_mesh(mesh, n, 77);
  write_cloud(PointCloud(samples.points, samples.normals), dir / "ref.ply");

  RunConfig cfg = tiny_config();
  cfg.eval.reconstruction_samples = n;
  cfg.eval.reference_samples = n;
  cfg.eval.threshold = 0.025;
  std::ostringstream log;
  const MetricsReport r = cmd_eval(cfg, dir / "s.ply", dir / "ref.ply", dir / "r.json", log);
  const double spacing = std::sqrt(mesh.area() / static_cast<double>(n));
  CHECK(r.l1cd < 2.0 * spacing);
  CHECK(r.fscore == 1.0);
  CHECK(r.nc > 0.99);
  std::ifstream in(dir / "r.json");
  CHECK(MetricsReport::from_json(json::parse(in)).l1cd == r.l1cd);

  write_cloud(PointCloud(samples.points), dir / "bare.ply");
  CHECK_THROWS_AS(cmd_eval(cfg, dir / "s.ply", dir / "bare.ply", dir / "r2.json", log), InvalidInput);

  write_text(dir / "sphere.json", ShapeOracle::sphere(0.8).to_json().dump());
  const MetricsReport o = cmd_eval(cfg, dir / "s.ply", dir / "sphere.json", dir / "r3.json", log);
  CHECK(o.l1cd < 0.01);
  CHECK(o.nc > 0.99);
}

TEST_CASE("ablate writes one csv row per candidate") {
  ScratchDir dir("ablate");
  RunConfig cfg = tiny_config();
  cfg.corpus.test_shapes = 1;
  std::ostringstream log;
  cmd_gen_corpus(cfg, dir / "corpus", log);
  const auto rows = cmd_ablate(cfg, {"lambda", {"0", "0.4"}}, dir / "corpus", {}, dir / "out", 2, log);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].value == "0");
  CHECK(rows[1].shapes.size() == 1);
  std::ifstream csv(dir / "out" / "lambda.csv");
  std::string header, line;
  std::getline(csv, header);
  CHECK(header == "lambda,mean_l1cd,mean_nc,shapes");
  std::size_t count = 0;
  while (std::getline(csv, line)) ++count;
  CHECK(count == 2);
  CHECK(fs::exists(dir / "out" / "cells" / "lambda_0.4.json"));
  CHECK_THROWS_AS(cmd_ablate(cfg, {"width", {}}, dir / "corpus", {}, dir / "out", 1, log), ConfigError);
}
