#pragma once

// Pipeline configuration: one JSON document, schema_version 1, unknown keys
// rejected. Missing keys take the defaults below.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cogdecomp/class_decomposition.hpp"
#include "cogdecomp/classifier.hpp"
#include "cogdecomp/error.hpp"
#include "cogdecomp/slice_selection.hpp"

namespace cogdecomp {

inline constexpr int kConfigSchemaVersion = 1;

struct SliceStageConfig {
  SliceEntropyConfig entropy;
  std::size_t top_k = kDefaultTopK;
};

struct FeatureStageConfig {
  std::string backend = "raw";  // raw | onnx | precomputed
  std::size_t side = 32;
  std::string model_path;
  std::string sidecar_path;  // empty = "<model_path>.json"
  std::string features_csv;  // precomputed backend input
};

struct PipelineConfig {
  std::vector<std::string> labels{"CN", "MCI", "AD"};
  SliceStageConfig slices;
  FeatureStageConfig features;
  double pca_variance_threshold = 0.95;
  DecompositionConfig decomposition;
  std::vector<double> learning_rates{0.01, 0.001};
  TrainConfig training;  // learning_rate and seed are set per grid cell
  double train_fraction = 0.8;
  double validation_fraction = 0.2;
  ComposeMode compose_mode = ComposeMode::ArgmaxStrip;
  std::uint64_t seed = 42;
  std::size_t threads = 0;  // 0 = hardware concurrency

  std::size_t worker_count() const { return threads ? threads : default_thread_count(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(Errc::InvalidConfig, m); };
    if (labels.empty()) fail("labels must not be empty");
    if (std::set<std::string>(labels.begin(), labels.end()).size() != labels.size()) fail("labels must be unique");
    if (slices.entropy.levels < 2) fail("slices.levels must be >= 2");
    if (slices.entropy.offset.drow == 0 && slices.entropy.offset.dcol == 0) fail("slices.offset must not be (0,0)");
    if (slices.top_k < 1) fail("slices.top_k must be >= 1");
    if (features.backend == "raw") {
      if (features.side < 2) fail("features.side must be >= 2");
    } else if (features.backend == "onnx") {
      if (features.model_path.empty()) fail("features.model_path is required for the onnx backend");
    } else if (features.backend == "precomputed") {
      if (features.features_csv.empty()) fail("features.features_csv is required for the precomputed backend");
    } else {
      fail("features.backend must be raw, onnx or precomputed");
    }
    if (!(pca_variance_threshold > 0.0 && pca_variance_threshold <= 1.0))
      fail("pca.variance_threshold must be in (0, 1]");
    const auto& d = decomposition;
    if (d.mode == DecompositionConfig::Mode::Fixed && d.k < 1) fail("decomposition.k must be >= 1");
    if (d.mode == DecompositionConfig::Mode::Elbow && (d.k_min < 1 || d.k_max < d.k_min + 2))
      fail("decomposition elbow range needs k_min >= 1 and at least three values");
    if (d.n_init < 1 || d.max_iter < 1 || !(d.tol >= 0.0)) fail("decomposition n_init/max_iter/tol invalid");
    if (learning_rates.empty()) fail("training.learning_rates must not be empty");
    for (double lr : learning_rates) {
      TrainConfig t = training;
      t.learning_rate = lr;
      t.validate();
    }
    training.validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("split.train_fraction must be in (0, 1)");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
      fail("split.validation_fraction must be in [0, 1)");
  }

  nlohmann::json to_json() const {
    nlohmann::json dec{{"mode", decomposition.mode == DecompositionConfig::Mode::Fixed ? "fixed" : "elbow"},
                       {"k", decomposition.k},
                       {"k_min", decomposition.k_min},
                       {"k_max", decomposition.k_max},
                       {"n_init", decomposition.n_init},
                       {"max_iter", decomposition.max_iter},
                       {"tol", decomposition.tol}};
    return {{"schema_version", kConfigSchemaVersion},
            {"labels", labels},
            {"slices",
             {{"levels", slices.entropy.levels},
              {"offset", {slices.entropy.offset.drow, slices.entropy.offset.dcol}},
              {"symmetric", slices.entropy.symmetric},
              {"top_k", slices.top_k}}},
            {"features",
             {{"backend", features.backend},
              {"side", features.side},
              {"model_path", features.model_path},
              {"sidecar_path", features.sidecar_path},
              {"features_csv", features.features_csv}}},
            {"pca", {{"variance_threshold", pca_variance_threshold}}},
            {"decomposition", dec},
            {"training",
             {{"learning_rates", learning_rates},
              {"epochs", training.epochs},
              {"batch_size", training.batch_size},
              {"hidden_dim", training.hidden_dim},
              {"beta1", training.beta1},
              {"beta2", training.beta2},
              {"epsilon", training.epsilon}}},
            {"split", {{"train_fraction", train_fraction}, {"validation_fraction", validation_fraction}}},
            {"compose_mode", to_string(compose_mode)},
            {"seed", seed},
            {"threads", threads}};
  }

  static PipelineConfig from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
      expect_keys(j, {"schema_version", "labels", "slices", "features", "pca", "decomposition", "training", "split",
                      "compose_mode", "seed", "threads"},
                  "config");
      if (j.value("schema_version", kConfigSchemaVersion) != kConfigSchemaVersion)
        throw Error(Errc::InvalidConfig, "unsupported schema_version");
      if (j.contains("labels")) c.labels = j.at("labels").get<std::vector<std::string>>();
      if (j.contains("slices")) {
        const auto& s = j.at("slices");
        expect_keys(s, {"levels", "offset", "symmetric", "top_k"}, "slices");
        c.slices.entropy.levels = s.value("levels", c.slices.entropy.levels);
        if (s.contains("offset")) {
          const auto off = s.at("offset").get<std::vector<int>>();
          if (off.size() != 2) throw Error(Errc::InvalidConfig, "slices.offset must be [drow, dcol]");
          c.slices.entropy.offset = {off[0], off[1]};
        }
        c.slices.entropy.symmetric = s.value("symmetric", c.slices.entropy.symmetric);
        c.slices.top_k = s.value("top_k", c.slices.top_k);
      }
      if (j.contains("features")) {
        const auto& f = j.at("features");
        expect_keys(f, {"backend", "side", "model_path", "sidecar_path", "features_csv"}, "features");
        c.features.backend = f.value("backend", c.features.backend);
        c.features.side = f.value("side", c.features.side);
        c.features.model_path = f.value("model_path", c.features.model_path);
        c.features.sidecar_path = f.value("sidecar_path", c.features.sidecar_path);
        c.features.features_csv = f.value("features_csv", c.features.features_csv);
      }
      if (j.contains("pca")) {
        expect_keys(j.at("pca"), {"variance_threshold"}, "pca");
        c.pca_variance_threshold = j.at("pca").value("variance_threshold", c.pca_variance_threshold);
      }
      if (j.contains("decomposition")) {
        const auto& d = j.at("decomposition");
        expect_keys(d, {"mode", "k", "k_min", "k_max", "n_init", "max_iter", "tol"}, "decomposition");
        const auto mode = d.value("mode", std::string("fixed"));
        if (mode == "fixed") c.decomposition.mode = DecompositionConfig::Mode::Fixed;
        else if (mode == "elbow") c.decomposition.mode = DecompositionConfig::Mode::Elbow;
        else throw Error(Errc::InvalidConfig, "decomposition.mode must be fixed or elbow");
        c.decomposition.k = d.value("k", c.decomposition.k);
        c.decomposition.k_min = d.value("k_min", c.decomposition.k_min);
        c.decomposition.k_max = d.value("k_max", c.decomposition.k_max);
        c.decomposition.n_init = d.value("n_init", c.decomposition.n_init);
        c.decomposition.max_iter = d.value("max_iter", c.decomposition.max_iter);
        c.decomposition.tol = d.value("tol", c.decomposition.tol);
      }
      if (j.contains("training")) {
        const auto& t = j.at("training");
        expect_keys(t, {"learning_rates", "epochs", "batch_size", "hidden_dim", "beta1", "beta2", "epsilon"},
                    "training");
        c.learning_rates = t.value("learning_rates", c.learning_rates);
        c.training.epochs = t.value("epochs", c.training.epochs);
        c.training.batch_size = t.value("batch_size", c.training.batch_size);
        c.training.hidden_dim = t.value("hidden_dim", c.training.hidden_dim);
        c.training.beta1 = t.value("beta1", c.training.beta1);
        c.training.beta2 = t.value("beta2", c.training.beta2);
        c.training.epsilon = t.value("epsilon", c.training.epsilon);
      }
      if (j.contains("split")) {
        const auto& s = j.at("split");
        expect_keys(s, {"train_fraction", "validation_fraction"}, "split");
        c.train_fraction = s.value("train_fraction", c.train_fraction);
        c.validation_fraction = s.value("validation_fraction", c.validation_fraction);
      }
      if (j.contains("compose_mode")) c.compose_mode = parse_compose_mode(j.at("compose_mode").get<std::string>());
      c.seed = j.value("seed", c.seed);
      c.threads = j.value("threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidConfig, e.what());
    }
    c.validate();
    return c;
  }

  static PipelineConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::InvalidConfig, "cannot open config " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::InvalidConfig, "config " + path.string() + ": " + e.what());
    }
    PipelineConfig c = from_json(j);
    // Relative input paths are relative to the config file.
    const auto base = path.parent_path();
    for (auto* p : {&c.features.model_path, &c.features.sidecar_path, &c.features.features_csv})
      if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
    return c;
  }

 private:
  static void expect_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> allowed,
                          const std::string& where) {
    if (!obj.is_object()) throw Error(Errc::InvalidConfig, where + " must be an object");
    for (const auto& [key, value] : obj.items())
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
        throw Error(Errc::InvalidConfig, "unknown key '" + key + "' in " + where);
  }
};

}  // namespace cogdecomp
