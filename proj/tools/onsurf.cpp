#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <sstream>

#include "onsurf/pipeline.hpp"

namespace {

using json = nlohmann::json;

enum ExitCode { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericalFailure = 4 };

json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw onsurf::ConfigError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw onsurf::ConfigError(path + ": " + e.what());
  }
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse point cloud surface reconstruction with a learned on-surface prior"};
  app.require_subcommand(1);
  app.set_version_flag("--version", onsurf::kToolVersion);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Global seed; overrides the config");

  // Overrides are written into the config JSON so validation sees them too.
  json overrides = json::object();
  auto set_override = [&](const char* section, const char* key) {
    return [&overrides, section, key](const auto& v) { overrides[section][key] = v; };
  };

  auto* gen = app.add_subcommand("gen-corpus", "Generate train/test shapes, sparse clouds and references");
  std::string corpus_out;
  gen->add_option("--out", corpus_out, "Output directory")->required();
  gen->add_option_function<std::size_t>("--points", set_override("corpus", "points"), "Points per sparse cloud");
  gen->add_option_function<double>("--noise", set_override("corpus", "noise"), "Noise, fraction of bbox diagonal");

  auto* train = app.add_subcommand("train-prior", "Train the on-surface prior on a corpus's train shapes");
  std::string train_corpus, train_out;
  train->add_option("--corpus", train_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", train_out, "Output prior model")->required();
  train->add_option_function<std::string>("--label-mode", set_override("prior", "label_mode"), "udf, binary or signed");
  train->add_option_function<std::size_t>("--k", set_override("prior", "k"), "Patch size");
  train->add_option_function<std::size_t>("--epochs", set_override("prior", "epochs"), "Training epochs");

  auto* fit = app.add_subcommand("fit", "Fit an SDF network to one sparse cloud");
  onsurf::FitCommand fit_cmd;
  std::string fit_cloud, fit_prior, fit_oracle, fit_out, fit_report;
  fit->add_option("--cloud", fit_cloud, "Input cloud (.xyz or .ply)")->required()->check(CLI::ExistingFile);
  auto* prior_opt = fit->add_option("--prior", fit_prior, "Trained prior model")->check(CLI::ExistingFile);
  auto* oracle_opt = fit->add_option("--oracle-prior", fit_oracle, "Use the exact distance to this oracle spec instead")
                         ->check(CLI::ExistingFile);
  prior_opt->excludes(oracle_opt);
  fit->add_option("--out", fit_out, "Output SDF model")->required();
  fit->add_option("--report", fit_report, "Fit report (default: <out>.fit.json)");
  fit->add_option_function<double>("--lambda", set_override("fit", "lambda"), "Regularization weight");
  fit->add_option_function<std::size_t>("--iterations", set_override("fit", "iterations"), "Optimizer steps");

  auto* recon = app.add_subcommand("reconstruct", "Extract the zero level set of a fitted SDF");
  std::string recon_model, recon_out;
  recon->add_option("--model", recon_model, "SDF model")->required()->check(CLI::ExistingFile);
  recon->add_option("--out", recon_out, "Output mesh (.obj or .ply)")->required();
  recon->add_option_function<std::size_t>("--resolution", set_override("reconstruct", "resolution"),
                                          "Grid samples per axis");

  auto* eval = app.add_subcommand("eval", "Compare a mesh with a reference surface");
  std::string eval_mesh, eval_ref, eval_out;
  eval->add_option("--mesh", eval_mesh, "Reconstructed mesh")->required()->check(CLI::ExistingFile);
  eval->add_option("--reference", eval_ref, "Dense PLY with normals or oracle spec (.json)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "Output report (JSON)")->required();
  eval->add_option_function<double>("--threshold", set_override("eval", "threshold"),
                                    "F-score distance threshold (0.001 shapes, 0.025 scenes)");
  eval->add_option_function<std::size_t>("--samples", [&](std::size_t n) {
    overrides["eval"]["reconstruction_samples"] = n;
    overrides["eval"]["reference_samples"] = n;
  }, "Samples per surface");

  auto* ablate = app.add_subcommand("ablate", "Sweep one setting over the test corpus");
  std::string ablate_axis, ablate_values, ablate_corpus, ablate_prior, ablate_out;
  std::size_t jobs = 1;
  ablate->add_option("--axis", ablate_axis, "lambda, k, normalization, density, noise or prior_mode")->required();
  ablate->add_option("--values", ablate_values, "Comma-separated subset of the axis's candidates");
  ablate->add_option("--corpus", ablate_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  ablate->add_option("--prior", ablate_prior, "Prior model for axes that keep it fixed")->check(CLI::ExistingFile);
  ablate->add_option("--out", ablate_out, "Output directory")->required();
  ablate->add_option("--jobs", jobs, "Cells run in parallel")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    json config_json = load_config_json(config_path);
    if (!config_json.is_object()) throw onsurf::ConfigError("run config must be a JSON object");
    config_json.merge_patch(overrides);
    if (seed) config_json["seed"] = *seed;
    const onsurf::RunConfig cfg = onsurf::RunConfig::from_json(config_json);

    if (gen->parsed()) {
      onsurf::cmd_gen_corpus(cfg, corpus_out, std::cout);
    } else if (train->parsed()) {
      onsurf::cmd_train_prior(cfg, train_corpus, train_out, std::cout);
    } else if (fit->parsed()) {
      if (fit_prior.empty() && fit_oracle.empty()) throw onsurf::ConfigError("fit needs --prior or --oracle-prior");
      fit_cmd.cloud = fit_cloud;
      fit_cmd.prior_model = fit_prior;
      fit_cmd.oracle_spec = fit_oracle;
      fit_cmd.out_model = fit_out;
      fit_cmd.report = fit_report;
      onsurf::cmd_fit(cfg, fit_cmd, std::cout);
    } else if (recon->parsed()) {
      onsurf::cmd_reconstruct(cfg, recon_model, recon_out, std::cout);
    } else if (eval->parsed()) {
      onsurf::cmd_eval(cfg, eval_mesh, eval_ref, eval_out, std::cout);
    } else if (ablate->parsed()) {
      onsurf::cmd_ablate(cfg, {ablate_axis, split_commas(ablate_values)}, ablate_corpus, ablate_prior, ablate_out,
                         jobs, std::cout);
    }
  } catch (const onsurf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const onsurf::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const onsurf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
