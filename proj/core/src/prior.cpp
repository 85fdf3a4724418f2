#include "onsurf/prior.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "onsurf/model_io.hpp"
#include "onsurf/optimizer.hpp"
#include "onsurf/sampling.hpp"

namespace onsurf {
namespace {

constexpr const char* kSamplesFile = "samples.f32";
constexpr const char* kManifestFile = "manifest.json";

std::vector<float> shape_records(const ShapeOracle& shape, std::size_t sparse_n, const PriorConfig& cfg,
                                 std::uint64_t shape_seed) {
  const PointCloud cloud = sample_surface(shape, sparse_n, derive_seed(shape_seed, "sparse"));
  const KnnIndex index(cloud);
  std::mt19937_64 rng(derive_seed(shape_seed, "probes"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_sigma(0, cfg.near_sigmas.size() - 1);
  const Bounds box = shape.bounds().inflated(cfg.bbox_inflation);
  const Vec3 extent = box.max - box.min;
  const auto near = static_cast<std::size_t>(std::llround(cfg.near_fraction * static_cast<double>(cfg.queries_per_shape)));

  const std::size_t rec = 4 * cfg.k + 4;
  std::vector<float> out;
  out.reserve(cfg.queries_per_shape * rec);
  for (std::size_t q = 0; q < cfg.queries_per_shape; ++q) {
    Point3 probe;
    if (q < near) {
      const Point3 on = shape.sample(rng).position;
      const double sigma = cfg.near_sigmas[pick_sigma(rng)];
      const Vec3 offset(normal(rng), normal(rng), normal(rng));
      probe = on + sigma * offset;
    } else {
      probe = box.min + extent.cwiseProduct(Vec3(uniform(rng), uniform(rng), uniform(rng)));
    }
    const LocalPatch patch = extract_patch(index, probe, cfg.k);
    for (int d = 0; d < 3; ++d) out.push_back(static_cast<float>(probe[d]));
    for (const auto& t : patch.neighbors)
      for (int d = 0; d < 3; ++d) out.push_back(static_cast<float>(t[d]));
    for (double dist : patch.distances) out.push_back(static_cast<float>(dist));
    out.push_back(static_cast<float>(prior_label(shape, probe, cfg)));
  }
  return out;
}

void fill_inputs(const PriorDataset& ds, PatchNormalization n, const std::size_t* ids, std::size_t count,
                 MatrixX& inputs, VectorX& labels) {
  const std::size_t k = ds.k;
  inputs.resize(static_cast<Eigen::Index>(encoded_patch_dim(k, n)), static_cast<Eigen::Index>(count));
  labels.resize(static_cast<Eigen::Index>(count));
  std::vector<Vec3> rel(k);
  for (std::size_t c = 0; c < count; ++c) {
    const float* r = ds.record(ids[c]);
    double* col = inputs.col(static_cast<Eigen::Index>(c)).data();
    if (n.translate && !n.rotate) {
      for (std::size_t i = 0; i < 3 * k; ++i) col[i] = r[3 + i];
    } else {
      for (std::size_t i = 0; i < k; ++i) rel[i] = Vec3(r[3 + 3 * i], r[4 + 3 * i], r[5 + 3 * i]);
      encode_relative_patch(Point3(r[0], r[1], r[2]), rel, n, col);
    }
    labels[static_cast<Eigen::Index>(c)] = r[4 * k + 3];
  }
}

}  // namespace

std::string to_string(LabelMode m) {
  switch (m) {
    case LabelMode::udf: return "udf";
    case LabelMode::binary: return "binary";
    case LabelMode::signed_distance: return "signed";
  }
  return "unknown";
}

LabelMode label_mode_from_string(const std::string& name) {
  for (auto m : {LabelMode::udf, LabelMode::binary, LabelMode::signed_distance}) {
    if (to_string(m) == name) return m;
  }
  throw InvalidInput("unknown label mode '" + name + "' (expected udf, binary or signed)");
}

double prior_label(const ShapeOracle& shape, const Point3& probe, const PriorConfig& cfg) {
  switch (cfg.label_mode) {
    case LabelMode::udf: return std::min(shape.udf(probe), cfg.label_clamp);
    case LabelMode::binary: return shape.udf(probe) < cfg.on_surface_threshold ? 1.0 : 0.0;
    case LabelMode::signed_distance:
      return std::clamp(shape.signed_distance(probe), -cfg.label_clamp, cfg.label_clamp);
  }
  return 0.0;
}

void PriorConfig::validate() const {
  if (k < 4) throw ConfigError("prior: k must be at least 4, got " + std::to_string(k));
  if (!(near_fraction >= 0.0 && near_fraction <= 1.0)) throw ConfigError("prior: near_fraction must lie in [0, 1]");
  if (!(label_clamp > 0.0)) throw ConfigError("prior: label_clamp must be positive");
  if (!(on_surface_threshold > 0.0)) throw ConfigError("prior: on_surface_threshold must be positive");
  if (near_sigmas.empty()) throw ConfigError("prior: near_sigmas must not be empty");
  for (double s : near_sigmas) {
    if (!(s > 0.0)) throw ConfigError("prior: near_sigmas must be positive");
  }
  if (!(bbox_inflation >= 0.0)) throw ConfigError("prior: bbox_inflation must be non-negative");
  if (batch_size == 0) throw ConfigError("prior: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("prior: learning_rate must be positive");
  if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0))
    throw ConfigError("prior: final_lr_fraction must lie in [0, 1]");
  try {
    architecture().validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("prior network: ") + e.what());
  }
}

MlpArchitecture PriorConfig::architecture() const {
  MlpArchitecture a;
  a.input_dim = encoded_patch_dim(k, normalization);
  a.hidden_dim = hidden_dim;
  a.num_layers = num_layers;
  a.skip_layer = num_layers / 2;
  return a;
}

nlohmann::json PriorConfig::to_json() const {
  return {{"k", k},
          {"queries_per_shape", queries_per_shape},
          {"near_fraction", near_fraction},
          {"near_sigmas", near_sigmas},
          {"bbox_inflation", bbox_inflation},
          {"label_clamp", label_clamp},
          {"on_surface_threshold", on_surface_threshold},
          {"label_mode", to_string(label_mode)},
          {"normalization", to_string(normalization)},
          {"hidden_dim", hidden_dim},
          {"num_layers", num_layers},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"final_lr_fraction", final_lr_fraction},
          {"seed", seed}};
}

PriorConfig PriorConfig::from_json(const nlohmann::json& j) {
  PriorConfig c;
  if (!j.is_object()) throw ConfigError("prior config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "k") c.k = value.get<std::size_t>();
      else if (key == "queries_per_shape") c.queries_per_shape = value.get<std::size_t>();
      else if (key == "near_fraction") c.near_fraction = value.get<double>();
      else if (key == "near_sigmas") c.near_sigmas = value.get<std::vector<double>>();
      else if (key == "bbox_inflation") c.bbox_inflation = value.get<double>();
      else if (key == "label_clamp") c.label_clamp = value.get<double>();
      else if (key == "on_surface_threshold") c.on_surface_threshold = value.get<double>();
      else if (key == "label_mode") c.label_mode = label_mode_from_string(value.get<std::string>());
      else if (key == "normalization") c.normalization = patch_normalization_from_string(value.get<std::string>());
      else if (key == "hidden_dim") c.hidden_dim = value.get<std::size_t>();
      else if (key == "num_layers") c.num_layers = value.get<std::size_t>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "final_lr_fraction") c.final_lr_fraction = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ConfigError("prior: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("prior: ") + e.what());
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("prior: ") + e.what());
  }
  c.validate();
  return c;
}

Point3 PriorDataset::probe(std::size_t i) const {
  const float* r = record(i);
  return {r[0], r[1], r[2]};
}

PriorDataset build_prior_dataset(const std::vector<ShapeOracle>& shapes, std::size_t sparse_n,
                                 const PriorConfig& cfg) {
  cfg.validate();
  if (shapes.empty()) throw InvalidInput("build_prior_dataset: need at least one shape");
  if (sparse_n < cfg.k)
    throw InvalidInput("build_prior_dataset: sparse clouds of " + std::to_string(sparse_n) +
                       " points cannot supply k = " + std::to_string(cfg.k) + " neighbors");
  if (cfg.label_mode == LabelMode::signed_distance) {
    for (const auto& s : shapes) {
      if (!s.has_inside_test())
        throw Unsupported("signed labels need an inside test, unavailable for " + to_string(s.kind()));
    }
  }

  std::vector<std::uint64_t> seeds(shapes.size());
  for (std::size_t s = 0; s < shapes.size(); ++s) seeds[s] = derive_seed(cfg.seed, "prior/shape/" + std::to_string(s));
  std::vector<std::vector<float>> parts(shapes.size());
  parallel_for(shapes.size(), [&](std::size_t s) { parts[s] = shape_records(shapes[s], sparse_n, cfg, seeds[s]); });

  PriorDataset ds;
  ds.k = cfg.k;
  ds.label_mode = cfg.label_mode;
  for (auto& p : parts) ds.records.insert(ds.records.end(), p.begin(), p.end());

  nlohmann::json shape_list = nlohmann::json::array();
  for (std::size_t s = 0; s < shapes.size(); ++s)
    shape_list.push_back({{"shape", shapes[s].to_json()}, {"seed", seeds[s]}});
  ds.manifest = {{"k", cfg.k},
                 {"label_mode", to_string(cfg.label_mode)},
                 {"sparse_n", sparse_n},
                 {"queries_per_shape", cfg.queries_per_shape},
                 {"near_fraction", cfg.near_fraction},
                 {"near_sigmas", cfg.near_sigmas},
                 {"bbox_inflation", cfg.bbox_inflation},
                 {"label_clamp", cfg.label_clamp},
                 {"on_surface_threshold", cfg.on_surface_threshold},
                 {"seed", cfg.seed},
                 {"count", ds.size()},
                 {"shapes", shape_list}};
  return ds;
}

void save_prior_dataset(const PriorDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream m(dir / kManifestFile);
    if (!m) throw InvalidInput("cannot write " + (dir / kManifestFile).string());
    nlohmann::json manifest = dataset.manifest;
    manifest["k"] = dataset.k;
    manifest["label_mode"] = to_string(dataset.label_mode);
    manifest["count"] = dataset.size();
    manifest["samples_file"] = kSamplesFile;
    manifest["record_floats"] = dataset.record_size();
    m << manifest.dump(2) << '\n';
  }
  std::ofstream f(dir / kSamplesFile, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidInput("cannot write " + (dir / kSamplesFile).string());
  static_assert(std::endian::native == std::endian::little);
  f.write(reinterpret_cast<const char*>(dataset.records.data()),
          static_cast<std::streamsize>(dataset.records.size() * sizeof(float)));
}

PriorDataset load_prior_dataset(const std::filesystem::path& dir) {
  std::ifstream m(dir / kManifestFile);
  if (!m) throw InvalidInput("missing " + (dir / kManifestFile).string());
  PriorDataset ds;
  std::size_t count = 0;
  try {
    ds.manifest = nlohmann::json::parse(m);
    ds.k = ds.manifest.at("k").get<std::size_t>();
    ds.label_mode = label_mode_from_string(ds.manifest.at("label_mode").get<std::string>());
    count = ds.manifest.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad dataset manifest: ") + e.what(), 0);
  }
  std::ifstream f(dir / kSamplesFile, std::ios::binary | std::ios::ate);
  if (!f) throw InvalidInput("missing " + (dir / kSamplesFile).string());
  const auto bytes = static_cast<std::size_t>(f.tellg());
  const std::size_t expected = count * ds.record_size() * sizeof(float);
  if (bytes != expected)
    throw FormatError("samples file holds " + std::to_string(bytes) + " bytes, manifest implies " +
                          std::to_string(expected),
                      std::min(bytes, expected));
  ds.records.resize(count * ds.record_size());
  f.seekg(0);
  f.read(reinterpret_cast<char*>(ds.records.data()), static_cast<std::streamsize>(bytes));
  return ds;
}

void PriorModel::validate() const {
  if (network.arch.input_dim != encoded_patch_dim(k, normalization))
    throw InvalidInput("prior network expects " + std::to_string(network.arch.input_dim) + " inputs but k = " +
                       std::to_string(k) + " with " + to_string(normalization) + " normalization needs " +
                       std::to_string(encoded_patch_dim(k, normalization)));
}

nlohmann::json PriorModel::metadata() const {
  return {{"role", "prior"}, {"k", k}, {"label_mode", to_string(label_mode)}, {"normalization", to_string(normalization)}};
}

PriorModel PriorModel::from_file(const std::filesystem::path& path) {
  auto loaded = load_model(path);
  PriorModel p;
  p.network = std::move(loaded.model);
  try {
    if (loaded.metadata.value("role", "") != "prior") throw InvalidInput(path.string() + " is not a prior model");
    p.k = loaded.metadata.at("k").get<std::size_t>();
    p.label_mode = label_mode_from_string(loaded.metadata.at("label_mode").get<std::string>());
    p.normalization = patch_normalization_from_string(loaded.metadata.at("normalization").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": incomplete prior metadata: " + e.what());
  }
  p.validate();
  return p;
}

void PriorModel::save(const std::filesystem::path& path, const nlohmann::json& extra) const {
  nlohmann::json meta = extra;
  meta.update(metadata());
  save_model(network, path, meta);
}

MatrixX dataset_inputs(const PriorDataset& dataset, PatchNormalization n, std::size_t begin, std::size_t count) {
  if (begin + count > dataset.size()) throw InvalidInput("dataset_inputs: range out of bounds");
  std::vector<std::size_t> ids(count);
  std::iota(ids.begin(), ids.end(), begin);
  MatrixX inputs;
  VectorX labels;
  fill_inputs(dataset, n, ids.data(), count, inputs, labels);
  return inputs;
}

PriorModel train_prior(const PriorDataset& dataset, const PriorConfig& cfg, PriorTrainingLog* log) {
  cfg.validate();
  if (dataset.size() == 0) throw InvalidInput("train_prior: empty dataset");
  if (dataset.k != cfg.k)
    throw InvalidInput("train_prior: dataset k = " + std::to_string(dataset.k) + " but config k = " +
                       std::to_string(cfg.k));

  PriorModel prior;
  prior.k = cfg.k;
  prior.label_mode = dataset.label_mode;
  prior.normalization = cfg.normalization;
  prior.network = init_model(cfg.architecture(), InitMode::uniform, derive_seed(cfg.seed, "prior/init"));
  double mean_label = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) mean_label += dataset.label(i);
  prior.network.biases.back()[0] = mean_label / static_cast<double>(dataset.size());

  const std::size_t n = dataset.size();
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::uint64_t total_steps = steps_per_epoch * cfg.epochs;
  auto state = OptimizerState::for_model(prior.network, cfg.learning_rate);
  std::mt19937_64 rng(derive_seed(cfg.seed, "prior/shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  MatrixX inputs;
  VectorX labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * batch;
      const std::size_t count = std::min(batch, n - begin);
      fill_inputs(dataset, cfg.normalization, order.data() + begin, count, inputs, labels);
      const auto head = [&](const VectorX& v, const MatrixX&) {
        const VectorX r = v - labels;
        const double m = static_cast<double>(v.size());
        return LossHeadOutput{r.squaredNorm() / m, 2.0 * r / m, MatrixX()};
      };
      const auto lg = loss_param_grads(prior.network, inputs, head, false);
      if (!std::isfinite(lg.loss))
        throw NumericalFailure("prior training diverged at epoch " + std::to_string(epoch));
      state.learning_rate = cosine_learning_rate(cfg.learning_rate, state.step, total_steps, cfg.final_lr_fraction);
      adam_step(prior.network, lg.grads, state);
      sum += lg.loss * static_cast<double>(count);
    }
    if (log) log->epoch_loss.push_back(sum / static_cast<double>(n));
  }
  return prior;
}

VectorX eval_prior(const PriorModel& prior, const KnnIndex& index, const std::vector<Point3>& probes) {
  prior.validate();
  if (index.size() < prior.k)
    throw InvalidInput("eval_prior: cloud has " + std::to_string(index.size()) + " points, prior needs k = " +
                       std::to_string(prior.k));
  MatrixX inputs(static_cast<Eigen::Index>(prior.network.arch.input_dim), static_cast<Eigen::Index>(probes.size()));
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const LocalPatch patch = extract_patch(index, probes[i], prior.k);
    encode_patch(index, probes[i], patch, prior.normalization, inputs.col(static_cast<Eigen::Index>(i)).data());
  }
  return forward(prior.network, inputs);
}

double eval_prior(const PriorModel& prior, const KnnIndex& index, const Point3& probe) {
  return eval_prior(prior, index, std::vector<Point3>{probe})[0];
}

std::vector<Point3> classify_on_surface(const PriorModel& prior, const KnnIndex& index,
                                        const std::vector<Point3>& probes, double threshold) {
  const VectorX pred = eval_prior(prior, index, probes);
  std::vector<Point3> kept;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    if (std::abs(pred[static_cast<Eigen::Index>(i)]) < threshold) kept.push_back(probes[i]);
  }
  return kept;
}

}  // namespace onsurf
