// cogdecomp: command-line front end for the slice-selection / class-decomposition
// pipeline. Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cogdecomp/pipeline.hpp"
#include "cogdecomp/synth.hpp"

namespace {

using namespace cogdecomp;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct GlobalOptions {
  std::string config;
  std::string manifest;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool force = false;
};

PipelineConfig load_config(const GlobalOptions& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : PipelineConfig::load(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

Manifest require_manifest(const GlobalOptions& g, const PipelineConfig& cfg) {
  if (g.manifest.empty()) throw Error(Errc::InvalidConfig, "--manifest is required");
  return load_manifest(g.manifest, cfg.labels);
}

fs::path slice_cache(const GlobalOptions& g) { return fs::path(g.out) / "cache" / "slices"; }

void print_metrics(const nlohmann::json& metrics) {
  const auto& m = metrics.at("selected").at("composed").at("metrics");
  std::cout << "selected " << metrics.at("selected_cell").get<std::string>() << ": accuracy "
            << m.at("accuracy").get<double>() << ", macro sensitivity " << m.at("macro_sensitivity").get<double>()
            << ", macro specificity " << m.at("macro_specificity").get<double>() << '\n';
}

int run(int argc, char** argv) {
  CLI::App app{"Entropy-based slice selection, class decomposition and classification of structural MRI"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "Pipeline config JSON");
  app.add_option("--manifest", g.manifest, "Manifest CSV (subject_id,label,path[,age,sex,mmse])");
  app.add_option("--out", g.out, "Output / work directory")->capture_default_str();
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_flag("--force", g.force, "Ignore cached slice selections");

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write synthetic NIfTI volumes and a manifest");
  synth_cmd->add_option("--subjects-per-class", synth.subjects_per_class)->capture_default_str();
  synth_cmd->add_option("--nz", synth.nz, "Axial slices per volume")->capture_default_str();
  synth_cmd->add_option("--side", synth.side, "In-plane size")->capture_default_str();

  auto* slices_cmd = app.add_subcommand("slices", "Rank slices by GLCM entropy and cache the top-k");
  auto* features_cmd = app.add_subcommand("features", "Extract feature vectors from cached slices");
  auto* decompose_cmd = app.add_subcommand("decompose", "Split subjects, fit scaler/PCA, decompose classes");
  auto* train_cmd = app.add_subcommand("train", "Train the classifier over the learning-rate grid");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate trained models on the test subjects");
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run every stage into a timestamped run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  const fs::path out = g.out;
  if (synth_cmd->parsed()) {
    synth.seed = g.seed.value_or(0);
    if (!g.config.empty()) synth.labels = load_config(g).labels;
    const auto m = cmd_synth(out, synth);
    std::cout << "wrote " << m.size() << " volumes and " << (out / "manifest.csv").string() << '\n';
    return 0;
  }

  const PipelineConfig cfg = load_config(g);
  if (slices_cmd->parsed()) {
    const auto r = cmd_slices(require_manifest(g, cfg), cfg, out, slice_cache(g), g.force);
    std::cout << r.processed.size() << " subjects processed (" << r.reused.size() << " from cache), "
              << r.errors.size() << " failed\n";
    for (const auto& e : r.errors) std::cerr << "error: " << e.subject_id << ": " << e.message << '\n';
    return r.errors.empty() ? 0 : kExitRuntime;
  }
  if (features_cmd->parsed()) {
    const Manifest m = cfg.features.backend == "precomputed" ? Manifest{} : require_manifest(g, cfg);
    const auto fm = cmd_features(m, cfg, out, slice_cache(g));
    std::cout << fm.rows() << " feature rows of width " << fm.values.cols() << '\n';
    return 0;
  }
  if (decompose_cmd->parsed()) {
    const auto f = cmd_decompose(cfg, out);
    std::cout << f.pca.components.rows() << " principal components, " << f.train.codec.num_subclasses()
              << " sub-classes\n";
    return 0;
  }
  if (train_cmd->parsed()) {
    const auto r = cmd_train(cfg, out);
    std::cout << "selected " << cell_name(r.cells[r.selected].learning_rate) << " by " << r.criterion << '\n';
    return 0;
  }
  if (evaluate_cmd->parsed()) {
    print_metrics(cmd_evaluate(cfg, out));
    return 0;
  }
  if (pipeline_cmd->parsed()) {
    const auto r = cmd_pipeline(require_manifest(g, cfg), cfg, out, g.force);
    std::cout << "run directory " << r.run_dir.string() << '\n';
    print_metrics(r.metrics);
    return 0;
  }
  return kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == Errc::InvalidConfig ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
