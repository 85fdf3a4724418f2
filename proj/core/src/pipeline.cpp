#include "onsurf/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "onsurf/cloud_io.hpp"
#include "onsurf/model_io.hpp"

namespace onsurf {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kCorpusIndex = "corpus.json";
constexpr const char* kManifestName = "run_manifest.json";

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw InvalidInput("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
}

fs::path sibling(const fs::path& file, const std::string& suffix) { return fs::path(file.string() + suffix); }

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InvalidInput("cannot create directory " + dir.string());
}

void require_parent(const fs::path& file) {
  const fs::path parent = file.parent_path();
  if (!parent.empty()) ensure_directory(parent);
}

ShapeOracle oracle_from_file(const fs::path& path) {
  const json spec = read_json(path);
  try {
    return ShapeOracle::from_json(spec);
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": invalid oracle spec: " + e.what());
  }
}

json bounds_json(const Bounds& b) {
  return {{"min", {b.min.x(), b.min.y(), b.min.z()}}, {"max", {b.max.x(), b.max.y(), b.max.z()}}};
}

Bounds bounds_from_json(const json& j) {
  const auto lo = j.at("min").get<std::vector<double>>();
  const auto hi = j.at("max").get<std::vector<double>>();
  if (lo.size() != 3 || hi.size() != 3) throw InvalidInput("cloud bounds need three coordinates");
  return {Point3(lo[0], lo[1], lo[2]), Point3(hi[0], hi[1], hi[2])};
}

std::string format_fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

void check_prior_k(const PriorModel& prior, const FitConfig& fit) {
  if (prior.k != fit.k)
    throw ConfigError("prior model was trained with k = " + std::to_string(prior.k) +
                      " but the fit config uses k = " + std::to_string(fit.k));
}

bool axis_retrains_prior(const std::string& axis) {
  return axis == "k" || axis == "normalization" || axis == "prior_mode";
}

}  // namespace

std::string CorpusShape::key() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shape_%02zu", index);
  return split + "/" + buf;
}

fs::path CorpusShape::spec_path(const fs::path& dir) const { return dir / (key() + ".json"); }
fs::path CorpusShape::cloud_path(const fs::path& dir) const { return dir / (key() + ".xyz"); }
fs::path CorpusShape::dense_path(const fs::path& dir) const { return dir / (key() + "_dense.ply"); }

std::vector<CorpusShape> corpus_shapes(const RunConfig& cfg, const std::string& split) {
  std::size_t count = 0;
  if (split == "train") count = cfg.corpus.train_shapes;
  else if (split == "test") count = cfg.corpus.test_shapes;
  else throw InvalidInput("unknown corpus split '" + split + "'");
  std::vector<CorpusShape> out;
  const auto shapes = generate_shapes(count, derive_seed(cfg.seed, "corpus/" + split));
  for (std::size_t i = 0; i < shapes.size(); ++i) out.push_back({split, i, shapes[i]});
  return out;
}

std::vector<CorpusShape> load_corpus(const fs::path& dir, const std::string& split) {
  const json index = read_json(dir / kCorpusIndex);
  std::vector<CorpusShape> out;
  try {
    const auto& list = index.at(split);
    for (std::size_t i = 0; i < list.size(); ++i) out.push_back({split, i, ShapeOracle::from_json(list[i])});
  } catch (const json::exception& e) {
    throw FormatError((dir / kCorpusIndex).string() + ": " + e.what(), 0);
  }
  if (out.empty()) throw InvalidInput("corpus at " + dir.string() + " has no " + split + " shapes");
  return out;
}

PointCloud corpus_cloud(const RunConfig& cfg, const CorpusShape& shape) {
  PointCloud cloud = sample_surface(shape.shape, cfg.corpus.points, derive_seed(cfg.seed, shape.key() + "/sparse"));
  if (cfg.corpus.noise > 0.0)
    cloud = add_noise(cloud, cfg.corpus.noise, derive_seed(cfg.seed, shape.key() + "/noise"));
  return cloud;
}

SampledSurface reference_from_oracle(const RunConfig& cfg, const ShapeOracle& oracle, const std::string& key) {
  return sample_oracle(oracle, cfg.eval.reference_samples, derive_seed(cfg.seed, "eval/reference/" + key));
}

MetricsReport evaluate_mesh(const RunConfig& cfg, const TriangleMesh& mesh, const SampledSurface& reference,
                            const std::string& key) {
  const std::uint64_t seed = derive_seed(cfg.seed, "eval/reconstruction/" + key);
  const SampledSurface recon = sample_mesh(mesh, cfg.eval.reconstruction_samples, seed);
  MetricsReport report = evaluate_surfaces(recon, reference, cfg.eval.threshold);
  report.reconstruction_seed = seed;
  report.reference_seed = derive_seed(cfg.seed, "eval/reference/" + key);
  return report;
}

ShapeOutcome run_shape(const RunConfig& cfg, const PriorModel* prior, const CorpusShape& shape,
                       const PointCloud& cloud) {
  const FitConfig fit_cfg = cfg.seeded_fit(shape.key());
  std::unique_ptr<SurfacePrior> surface_prior;
  if (prior) {
    check_prior_k(*prior, fit_cfg);
    surface_prior = std::make_unique<LearnedSurfacePrior>(*prior, cloud);
  } else {
    surface_prior = std::make_unique<OracleSurfacePrior>(shape.shape);
  }
  ShapeOutcome out;
  out.key = shape.key();
  const FitResult fit = fit_sdf(cloud, *surface_prior, fit_cfg);
  out.fit_seconds = fit.wall_seconds;
  out.final_loss = fit.loss_history.back();
  out.degenerate_queries = fit.degenerate_queries;

  const auto start = std::chrono::steady_clock::now();
  const TriangleMesh mesh = reconstruct(fit.sdf, bounds_of(cloud), cfg.reconstruct);
  out.reconstruct_seconds = seconds_since(start);
  out.faces = mesh.faces.size();
  if (mesh.empty()) {
    out.metrics.l1cd = out.metrics.l2cd = std::numeric_limits<double>::infinity();
    out.metrics.threshold = cfg.eval.threshold;
    return out;
  }
  out.metrics = evaluate_mesh(cfg, mesh, reference_from_oracle(cfg, shape.shape, shape.key()), shape.key());
  return out;
}

PriorModel train_corpus_prior(const RunConfig& cfg, const std::vector<ShapeOracle>& shapes, std::ostream& log) {
  const PriorConfig prior_cfg = cfg.seeded_prior();
  auto start = std::chrono::steady_clock::now();
  const PriorDataset dataset = build_prior_dataset(shapes, cfg.corpus.points, prior_cfg);
  log << "dataset: " << dataset.size() << " probes from " << shapes.size() << " shapes, k = " << prior_cfg.k
      << ", labels " << to_string(prior_cfg.label_mode) << " (" << format_fixed(seconds_since(start), 1) << " s)\n";
  start = std::chrono::steady_clock::now();
  PriorTrainingLog training;
  PriorModel model = train_prior(dataset, prior_cfg, &training);
  log << "epoch  mse\n";
  for (std::size_t e = 0; e < training.epoch_loss.size(); ++e)
    log << std::setw(5) << e + 1 << "  " << std::scientific << std::setprecision(4) << training.epoch_loss[e]
        << std::defaultfloat << '\n';
  log << "trained in " << format_fixed(seconds_since(start), 1) << " s\n";
  return model;
}

void cmd_gen_corpus(const RunConfig& cfg, const fs::path& out_dir, std::ostream& log) {
  ensure_directory(out_dir / "train");
  ensure_directory(out_dir / "test");
  RunManifest manifest("gen-corpus", cfg);
  const auto start = std::chrono::steady_clock::now();
  json index = {{"seed", cfg.seed}, {"corpus", cfg.to_json().at("corpus")}, {"train", json::array()},
                {"test", json::array()}};
  for (const std::string split : {"train", "test"}) {
    for (const CorpusShape& s : corpus_shapes(cfg, split)) {
      const json spec = s.shape.to_json();
      index[split].push_back(spec);
      write_json(spec, s.spec_path(out_dir));
      write_xyz(corpus_cloud(cfg, s), s.cloud_path(out_dir));
      write_ply_cloud(sample_surface(s.shape, cfg.corpus.dense_points, derive_seed(cfg.seed, s.key() + "/dense")),
                      s.dense_path(out_dir));
      for (const auto& p : {s.spec_path(out_dir), s.cloud_path(out_dir), s.dense_path(out_dir)}) manifest.add_output(p);
      log << s.key() << "  " << to_string(s.shape.kind()) << '\n';
    }
  }
  write_json(index, out_dir / kCorpusIndex);
  manifest.add_output(out_dir / kCorpusIndex);
  manifest.add_timing("gen-corpus", seconds_since(start));
  manifest.write(out_dir / kManifestName);
  log << "wrote " << cfg.corpus.train_shapes << " train and " << cfg.corpus.test_shapes << " test shapes ("
      << cfg.corpus.points << " points each) to " << out_dir.string() << '\n';
}

void cmd_train_prior(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out_model, std::ostream& log) {
  std::vector<ShapeOracle> shapes;
  for (auto& s : load_corpus(corpus_dir, "train")) shapes.push_back(std::move(s.shape));
  require_parent(out_model);
  RunManifest manifest("train-prior", cfg);
  manifest.add_input(corpus_dir / kCorpusIndex);
  const auto start = std::chrono::steady_clock::now();
  const PriorModel prior = train_corpus_prior(cfg, shapes, log);
  manifest.add_timing("train-prior", seconds_since(start));
  prior.save(out_model, {{"config_hash", cfg.hash()}});
  manifest.add_output(out_model);
  manifest.write(sibling(out_model, ".manifest.json"));
  log << "saved prior to " << out_model.string() << '\n';
}

void cmd_fit(const RunConfig& cfg, const FitCommand& command, std::ostream& log) {
  const PointCloud cloud = read_cloud(command.cloud);
  cloud.require_valid();
  const FitConfig fit_cfg = cfg.seeded_fit(command.cloud.stem().string());

  RunManifest manifest("fit", cfg);
  manifest.add_input(command.cloud);
  std::optional<PriorModel> prior;
  std::unique_ptr<SurfacePrior> surface_prior;
  if (!command.oracle_spec.empty()) {
    surface_prior = std::make_unique<OracleSurfacePrior>(oracle_from_file(command.oracle_spec));
    manifest.add_input(command.oracle_spec);
  } else {
    if (command.prior_model.empty()) throw ConfigError("fit needs a prior model or an oracle spec");
    prior = PriorModel::from_file(command.prior_model);
    check_prior_k(*prior, fit_cfg);
    surface_prior = std::make_unique<LearnedSurfacePrior>(*prior, cloud);
    manifest.add_input(command.prior_model);
  }
  require_parent(command.out_model);

  log << "cloud: " << cloud.size() << " points from " << command.cloud.string() << '\n';
  log << "prior: " << surface_prior->name() << '\n';
  log << "lambda: " << fit_cfg.lambda << '\n';
  if (fit_cfg.lambda == 0.0) log << "regularization: off\n";

  json history = json::array();
  auto progress = [&](std::size_t it, const LossRecord& loss) {
    if (it % 100 != 0 && it + 1 != fit_cfg.iterations) return;
    history.push_back({{"iteration", it}, {"total", loss.total}, {"on_surface", loss.on_surface},
                       {"regularization", loss.regularization}});
    log << "iter " << std::setw(5) << it << "  loss " << format_fixed(loss.total, 6) << "  on-surface "
        << format_fixed(loss.on_surface, 6) << "  reg " << format_fixed(loss.regularization, 6) << '\n';
  };
  const FitResult result = fit_sdf(cloud, *surface_prior, fit_cfg, progress);

  json metadata = {{"role", "sdf"},
                   {"config_hash", result.config_hash},
                   {"prior", surface_prior->name()},
                   {"lambda", fit_cfg.lambda},
                   {"cloud_bounds", bounds_json(bounds_of(cloud))}};
  save_model(result.sdf, command.out_model, metadata);

  const LossRecord& last = result.loss_history.back();
  json report = {{"cloud", command.cloud.string()},
                 {"prior", surface_prior->name()},
                 {"lambda", fit_cfg.lambda},
                 {"regularization", fit_cfg.lambda == 0.0 ? "off" : "on"},
                 {"fit", fit_cfg.to_json()},
                 {"config_hash", result.config_hash},
                 {"iterations", result.loss_history.size()},
                 {"degenerate_queries", result.degenerate_queries},
                 {"final_loss", {{"total", last.total}, {"on_surface", last.on_surface},
                                 {"regularization", last.regularization}}},
                 {"loss_history", history},
                 {"wall_seconds", result.wall_seconds}};
  const fs::path report_path =
      command.report.empty() ? fs::path(command.out_model).replace_extension(".fit.json") : command.report;
  require_parent(report_path);
  write_json(report, report_path);

  manifest.add_output(command.out_model);
  manifest.add_output(report_path);
  manifest.add_timing("fit", result.wall_seconds);
  manifest.write(sibling(command.out_model, ".manifest.json"));
  log << "saved SDF to " << command.out_model.string() << " (" << format_fixed(result.wall_seconds, 1) << " s)\n";
}

bool cmd_reconstruct(const RunConfig& cfg, const fs::path& sdf_model, const fs::path& out_mesh, std::ostream& log) {
  LoadedModel loaded = load_model(sdf_model);
  Bounds bounds;
  try {
    if (loaded.metadata.value("role", "") != "sdf") throw InvalidInput(sdf_model.string() + " is not an SDF model");
    bounds = bounds_from_json(loaded.metadata.at("cloud_bounds"));
  } catch (const json::exception& e) {
    throw InvalidInput(sdf_model.string() + ": incomplete SDF metadata: " + e.what());
  }
  require_parent(out_mesh);
  RunManifest manifest("reconstruct", cfg);
  manifest.add_input(sdf_model);
  const auto start = std::chrono::steady_clock::now();
  const TriangleMesh mesh = reconstruct(loaded.model, bounds, cfg.reconstruct);
  manifest.add_timing("reconstruct", seconds_since(start));
  if (mesh.empty())
    log << "warning: the zero level set is empty at resolution " << cfg.reconstruct.resolution
        << "; writing an empty mesh\n";
  write_mesh(mesh, out_mesh);
  manifest.add_output(out_mesh);
  manifest.set("resolution", cfg.reconstruct.resolution);
  manifest.write(sibling(out_mesh, ".manifest.json"));
  log << "mesh: " << mesh.vertices.size() << " vertices, " << mesh.faces.size() << " faces -> " << out_mesh.string()
      << '\n';
  return !mesh.empty();
}

MetricsReport cmd_eval(const RunConfig& cfg, const fs::path& mesh_path, const fs::path& reference,
                       const fs::path& out_report, std::ostream& log) {
  const TriangleMesh mesh = read_mesh(mesh_path);
  if (mesh.empty()) throw InvalidInput(mesh_path.string() + " has no faces to evaluate");
  const std::string key = mesh_path.stem().string();

  SampledSurface ref;
  std::string ext = reference.extension().string();
  if (ext == ".json") {
    ref = reference_from_oracle(cfg, oracle_from_file(reference), key);
  } else {
    const PointCloud cloud = read_cloud(reference);
    if (!cloud.has_normals())
      throw InvalidInput(reference.string() + " has no normals; normal consistency needs them");
    ref.points = cloud.points();
    ref.normals = cloud.normals();
    ref.source = SurfaceSource::mesh;
  }
  RunManifest manifest("eval", cfg);
  manifest.add_input(mesh_path);
  manifest.add_input(reference);
  const auto start = std::chrono::steady_clock::now();
  MetricsReport report = evaluate_mesh(cfg, mesh, ref, key);
  if (ext != ".json") report.reference_seed = 0;
  manifest.add_timing("eval", seconds_since(start));

  require_parent(out_report);
  json j = report.to_json();
  j["mesh"] = mesh_path.string();
  j["reference"] = reference.string();
  write_json(j, out_report);
  manifest.add_output(out_report);
  manifest.write(sibling(out_report, ".manifest.json"));
  log << "L1CD " << report.l1cd << "  L2CD " << report.l2cd << "  NC " << report.nc << "  F-score("
      << report.threshold << ") " << report.fscore << '\n';
  return report;
}

std::vector<std::string> ablation_candidates(const std::string& axis) {
  if (axis == "lambda") return {"0", "0.2", "0.4", "0.6"};
  if (axis == "k") return {"25", "50", "100", "200"};
  if (axis == "normalization") return {"none", "trans", "rot", "trans_rot"};
  if (axis == "density") return {"250", "500", "1000", "2000"};
  if (axis == "noise") return {"0", "0.005", "0.01"};
  if (axis == "prior_mode") return {"udf", "binary", "signed"};
  throw ConfigError("unknown ablation axis '" + axis +
                    "' (expected lambda, k, normalization, density, noise or prior_mode)");
}

RunConfig ablation_cell_config(const RunConfig& base, const std::string& axis, const std::string& value) {
  const auto candidates = ablation_candidates(axis);
  if (std::ranges::find(candidates, value) == candidates.end())
    throw ConfigError("'" + value + "' is not a candidate value of the " + axis + " axis");
  RunConfig c = base;
  if (axis == "lambda") {
    c.fit.lambda = std::stod(value);
  } else if (axis == "k") {
    c.prior.k = c.fit.k = std::stoul(value);
  } else if (axis == "normalization") {
    c.prior.normalization = patch_normalization_from_string(value);
  } else if (axis == "density") {
    c.corpus.points = std::stoul(value);
  } else if (axis == "noise") {
    c.corpus.noise = std::stod(value);
  } else {
    c.prior.label_mode = label_mode_from_string(value);
  }
  c.validate();
  return c;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const AblationSpec& spec, const fs::path& corpus_dir,
                                    const fs::path& prior_model, const fs::path& out_dir, std::size_t jobs,
                                    std::ostream& log) {
  const std::vector<std::string> values = spec.values.empty() ? ablation_candidates(spec.axis) : spec.values;
  std::vector<RunConfig> cells;
  for (const auto& v : values) cells.push_back(ablation_cell_config(cfg, spec.axis, v));
  const bool retrain = axis_retrains_prior(spec.axis);
  if (retrain && !prior_model.empty())
    throw ConfigError("the " + spec.axis + " axis trains its own priors; drop the prior model argument");

  const auto test = load_corpus(corpus_dir, "test");
  std::vector<ShapeOracle> train;
  if (retrain || prior_model.empty())
    for (auto& s : load_corpus(corpus_dir, "train")) train.push_back(std::move(s.shape));
  ensure_directory(out_dir / "cells");

  RunManifest manifest("ablate", cfg);
  manifest.add_input(corpus_dir / kCorpusIndex);
  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    std::lock_guard lock(log_mutex);
    log << line << std::flush;
  };

  std::optional<PriorModel> shared;
  if (!retrain) {
    if (!prior_model.empty()) {
      shared = PriorModel::from_file(prior_model);
      manifest.add_input(prior_model);
    } else {
      std::ostringstream training_log;
      shared = train_corpus_prior(cfg, train, training_log);
      say(training_log.str());
    }
  }

  std::vector<AblationRow> rows(values.size());
  auto run_cell = [&](std::size_t c) {
    const std::string cell_key = spec.axis + "=" + values[c];
    RunConfig cell = cells[c];
    // Clouds come from the run seed so every cell sees the same inputs.
    RunConfig cloud_cfg = cfg;
    cloud_cfg.corpus = cell.corpus;
    cell.seed = derive_seed(cfg.seed, "ablate/" + cell_key);

    std::optional<PriorModel> own;
    if (retrain) {
      std::ostringstream training_log;
      own = train_corpus_prior(cell, train, training_log);
      say("[" + cell_key + "] prior trained\n");
    }
    const PriorModel& prior = retrain ? *own : *shared;
    AblationRow& row = rows[c];
    row.value = values[c];
    for (const auto& shape : test) {
      ShapeOutcome o = run_shape(cell, &prior, shape, corpus_cloud(cloud_cfg, shape));
      say("[" + cell_key + "] " + o.key + "  L1CD " + format_fixed(o.metrics.l1cd, 5) + "  NC " +
          format_fixed(o.metrics.nc, 4) + '\n');
      row.shapes.push_back(std::move(o));
    }
    for (const auto& o : row.shapes) {
      row.mean_l1cd += o.metrics.l1cd / static_cast<double>(row.shapes.size());
      row.mean_nc += o.metrics.nc / static_cast<double>(row.shapes.size());
    }
    json per_shape = json::array();
    for (const auto& o : row.shapes)
      per_shape.push_back({{"shape", o.key}, {"metrics", o.metrics.to_json()}, {"final_loss", o.final_loss.total},
                           {"faces", o.faces}});
    write_json({{"axis", spec.axis}, {"value", row.value}, {"seed", cell.seed}, {"config", cell.to_json()},
                {"mean_l1cd", row.mean_l1cd}, {"mean_nc", row.mean_nc}, {"shapes", per_shape}},
               out_dir / "cells" / (spec.axis + "_" + row.value + ".json"));
  };

  const auto start = std::chrono::steady_clock::now();
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t c; (c = next.fetch_add(1)) < cells.size();) {
      try {
        run_cell(c);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = cells.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  const fs::path csv_path = out_dir / (spec.axis + ".csv");
  std::ofstream csv(csv_path);
  if (!csv) throw InvalidInput("cannot open " + csv_path.string() + " for writing");
  csv << spec.axis << ",mean_l1cd,mean_nc,shapes\n";
  for (const auto& row : rows)
    csv << row.value << ',' << format_fixed(row.mean_l1cd, 6) << ',' << format_fixed(row.mean_nc, 6) << ','
        << row.shapes.size() << '\n';
  csv.close();

  manifest.add_output(csv_path);
  for (const auto& row : rows) manifest.add_output(out_dir / "cells" / (spec.axis + "_" + row.value + ".json"));
  manifest.add_timing("ablate", seconds_since(start));
  manifest.set("axis", spec.axis);
  manifest.write(out_dir / kManifestName);
  log << "wrote " << csv_path.string() << '\n';
  return rows;
}

}  // namespace onsurf
