#include "onsurf/run_config.hpp"

#include <fstream>

#include <openssl/evp.h>

namespace onsurf {
namespace {

using json = nlohmann::json;

template <typename T>
T get(const json& value, const std::string& where) {
  try {
    return value.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

void reject_seed(const json& section, const std::string& name) {
  if (section.is_object() && section.contains("seed"))
    throw ConfigError(name + ": per-section seeds are not allowed; set the top-level seed");
}

CorpusConfig corpus_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("corpus config must be a JSON object");
  CorpusConfig c;
  for (const auto& [key, value] : j.items()) {
    const std::string where = "corpus." + key;
    if (key == "train_shapes") c.train_shapes = get<std::size_t>(value, where);
    else if (key == "test_shapes") c.test_shapes = get<std::size_t>(value, where);
    else if (key == "points") c.points = get<std::size_t>(value, where);
    else if (key == "dense_points") c.dense_points = get<std::size_t>(value, where);
    else if (key == "noise") c.noise = get<double>(value, where);
    else throw ConfigError("corpus: unknown key '" + key + "'");
  }
  return c;
}

ReconstructOptions reconstruct_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("reconstruct config must be a JSON object");
  ReconstructOptions r;
  for (const auto& [key, value] : j.items()) {
    const std::string where = "reconstruct." + key;
    if (key == "resolution") r.resolution = get<std::size_t>(value, where);
    else if (key == "bbox_inflation") r.bbox_inflation = get<double>(value, where);
    else throw ConfigError("reconstruct: unknown key '" + key + "'");
  }
  return r;
}

EvalConfig eval_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("eval config must be a JSON object");
  EvalConfig e;
  for (const auto& [key, value] : j.items()) {
    const std::string where = "eval." + key;
    if (key == "reconstruction_samples") e.reconstruction_samples = get<std::size_t>(value, where);
    else if (key == "reference_samples") e.reference_samples = get<std::size_t>(value, where);
    else if (key == "threshold") e.threshold = get<double>(value, where);
    else throw ConfigError("eval: unknown key '" + key + "'");
  }
  return e;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      c.seed = get<std::uint64_t>(value, "seed");
    } else if (key == "corpus") {
      c.corpus = corpus_from_json(value);
    } else if (key == "prior") {
      reject_seed(value, "prior");
      c.prior = PriorConfig::from_json(value);
    } else if (key == "fit") {
      reject_seed(value, "fit");
      c.fit = FitConfig::from_json(value);
    } else if (key == "reconstruct") {
      c.reconstruct = reconstruct_from_json(value);
    } else if (key == "eval") {
      c.eval = eval_from_json(value);
    } else {
      throw ConfigError("unknown top-level key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

json RunConfig::to_json() const {
  json prior_json = prior.to_json();
  prior_json.erase("seed");
  json fit_json = fit.to_json();
  fit_json.erase("seed");
  return {{"seed", seed},
          {"corpus",
           {{"train_shapes", corpus.train_shapes},
            {"test_shapes", corpus.test_shapes},
            {"points", corpus.points},
            {"dense_points", corpus.dense_points},
            {"noise", corpus.noise}}},
          {"prior", prior_json},
          {"fit", fit_json},
          {"reconstruct", {{"resolution", reconstruct.resolution}, {"bbox_inflation", reconstruct.bbox_inflation}}},
          {"eval",
           {{"reconstruction_samples", eval.reconstruction_samples},
            {"reference_samples", eval.reference_samples},
            {"threshold", eval.threshold}}}};
}

void RunConfig::validate() const {
  if (corpus.train_shapes == 0 && corpus.test_shapes == 0) throw ConfigError("corpus: no shapes requested");
  if (corpus.points < 4) throw ConfigError("corpus: points must be at least 4");
  if (corpus.dense_points < 4) throw ConfigError("corpus: dense_points must be at least 4");
  if (!(corpus.noise >= 0.0 && corpus.noise <= 0.05)) throw ConfigError("corpus: noise must lie in [0, 0.05]");
  prior.validate();
  fit.validate();
  if (prior.k != fit.k)
    throw ConfigError("prior.k = " + std::to_string(prior.k) + " but fit.k = " + std::to_string(fit.k));
  if (reconstruct.resolution < 8) throw ConfigError("reconstruct: resolution must be at least 8");
  if (!(reconstruct.bbox_inflation >= 0.0)) throw ConfigError("reconstruct: bbox_inflation must be non-negative");
  if (eval.reconstruction_samples == 0 || eval.reference_samples == 0)
    throw ConfigError("eval: sample counts must be positive");
  if (!(eval.threshold > 0.0)) throw ConfigError("eval: threshold must be positive");
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

PriorConfig RunConfig::seeded_prior() const {
  PriorConfig p = prior;
  p.seed = derive_seed(seed, "prior");
  return p;
}

FitConfig RunConfig::seeded_fit(const std::string& cloud_key) const {
  FitConfig f = fit;
  f.seed = derive_seed(seed, "fit/" + cloud_key);
  return f;
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string() + " for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

RunManifest::RunManifest(std::string command, const RunConfig& config)
    : command_(std::move(command)), config_hash_(config.hash()), seed_(config.seed) {}

void RunManifest::add_input(const std::filesystem::path& path) { inputs_.push_back(path); }
void RunManifest::add_output(const std::filesystem::path& path) { outputs_.push_back(path); }
void RunManifest::add_timing(const std::string& stage, double seconds) { timings_.emplace_back(stage, seconds); }
void RunManifest::set(const std::string& key, json value) { extra_[key] = std::move(value); }

json RunManifest::to_json() const {
  auto digests = [](const std::vector<std::filesystem::path>& files) {
    json out = json::object();
    for (const auto& f : files) out[f.string()] = file_sha256(f);
    return out;
  };
  json timings = json::object();
  for (const auto& [stage, seconds] : timings_) timings[stage] = seconds;
  json j = {{"command", command_},
            {"tool_version", kToolVersion},
            {"config_hash", config_hash_},
            {"seed", seed_},
            {"inputs", digests(inputs_)},
            {"outputs", digests(outputs_)},
            {"timings_seconds", timings}};
  for (const auto& [key, value] : extra_.items()) j[key] = value;
  return j;
}

void RunManifest::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  out << to_json().dump(2) << '\n';
}

}  // namespace onsurf
