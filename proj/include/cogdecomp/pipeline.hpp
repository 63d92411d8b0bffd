#pragma once

// End-to-end orchestration. Every stage reads and writes plain CSV/JSON in a
// work directory, so stages can run one at a time from the CLI or chained by
// cmd_pipeline inside a timestamped run directory:
//
//   slices     -> slice_entropy.csv, slice_errors.csv, <cache>/<subject>.json
//   features   -> features.csv
//   decompose  -> split.csv, scaler.json, pca.json, decomposition.json,
//                 decomposition_report.csv, sublabeled_{train,validation,test}.csv
//   train      -> models/cell<i>.json, training_curves.csv, selection.json
//   evaluate   -> metrics.json, report.txt

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cogdecomp/class_decomposition.hpp"
#include "cogdecomp/classifier.hpp"
#include "cogdecomp/config.hpp"
#include "cogdecomp/csv.hpp"
#include "cogdecomp/evaluation.hpp"
#include "cogdecomp/feature_pipeline.hpp"
#include "cogdecomp/manifest.hpp"
#include "cogdecomp/onnx_backend.hpp"
#include "cogdecomp/parallel.hpp"
#include "cogdecomp/slice_selection.hpp"
#include "cogdecomp/split.hpp"
#include "cogdecomp/volume_io.hpp"

namespace cogdecomp {

namespace fs = std::filesystem;

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = csv::open_for_write(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(Errc::IoError, "write failure in " + path.string());
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// slices

struct SubjectSlices {
  std::string subject_id;
  std::string label;
  std::vector<RankedSlice> ranking;  // all slices, best first
  std::vector<Slice2D> selected;     // top-k, in ranking order
};

struct StageError {
  std::string subject_id;
  std::string message;
};

struct SliceStageResult {
  std::vector<std::string> processed;
  std::vector<std::string> reused;
  std::vector<StageError> errors;
};

namespace detail {

inline nlohmann::json slice_fingerprint(const PipelineConfig& cfg, const ManifestRow& row) {
  std::error_code ec;
  const auto size = fs::file_size(row.path, ec);
  return {{"levels", cfg.slices.entropy.levels},
          {"offset", {cfg.slices.entropy.offset.drow, cfg.slices.entropy.offset.dcol}},
          {"symmetric", cfg.slices.entropy.symmetric},
          {"top_k", cfg.slices.top_k},
          {"source", fs::absolute(row.path).lexically_normal().string()},
          {"source_bytes", ec ? 0 : size}};
}

inline fs::path cache_file(const fs::path& cache_dir, const std::string& subject_id) {
  return cache_dir / (subject_id + ".json");
}

}  // namespace detail

inline nlohmann::json to_json(const SubjectSlices& s, const nlohmann::json& fingerprint) {
  nlohmann::json ranking = nlohmann::json::array();
  for (const auto& r : s.ranking) ranking.push_back({{"slice_index", r.slice_index}, {"entropy", r.entropy}});
  nlohmann::json selected = nlohmann::json::array();
  for (const auto& sl : s.selected)
    selected.push_back({{"slice_index", sl.slice_index},
                        {"rows", sl.pixels.rows()},
                        {"cols", sl.pixels.cols()},
                        {"pixels", sl.pixels.values()}});
  return {{"subject_id", s.subject_id},
          {"label", s.label},
          {"fingerprint", fingerprint},
          {"ranking", ranking},
          {"selected", selected}};
}

inline SubjectSlices subject_slices_from_json(const nlohmann::json& j) {
  SubjectSlices s{j.at("subject_id").get<std::string>(), j.at("label").get<std::string>(), {}, {}};
  for (const auto& r : j.at("ranking"))
    s.ranking.push_back({s.subject_id, r.at("slice_index").get<std::size_t>(), r.at("entropy").get<double>()});
  for (const auto& sl : j.at("selected")) {
    const auto rows = sl.at("rows").get<std::size_t>();
    const auto cols = sl.at("cols").get<std::size_t>();
    auto pixels = sl.at("pixels").get<std::vector<double>>();
    if (pixels.size() != rows * cols) throw Error(Errc::ParseError, "cached slice has wrong pixel count");
    s.selected.push_back({s.subject_id, sl.at("slice_index").get<std::size_t>(), Grid<double>(rows, cols, std::move(pixels))});
  }
  return s;
}

/// Ranks and selects one subject's slices.
inline SubjectSlices select_subject_slices(const ManifestRow& row, const PipelineConfig& cfg) {
  const Volume v = read_nifti(row.path, row.subject_id);
  const auto slices = extract_axial_slices(v);
  SubjectSlices s{row.subject_id, row.label, rank_slices(slices, cfg.slices.entropy), {}};
  if (v.dims[2] < cfg.slices.top_k)
    warn("subject " + row.subject_id + " has " + std::to_string(v.dims[2]) + " slices, fewer than top_k = " +
         std::to_string(cfg.slices.top_k));
  for (const auto& r : select_top_k(s.ranking, cfg.slices.top_k)) s.selected.push_back(slices[r.slice_index]);
  return s;
}

/// Per-subject entropy ranking and top-k selection with a JSON cache.
/// Failures are isolated per subject and reported in the result.
inline SliceStageResult cmd_slices(const Manifest& manifest, const PipelineConfig& cfg, const fs::path& work_dir,
                                   const fs::path& cache_dir, bool force = false) {
  cfg.validate();
  fs::create_directories(work_dir);
  fs::create_directories(cache_dir);

  std::vector<std::optional<SubjectSlices>> results(manifest.size());
  std::vector<std::string> failures(manifest.size());
  std::vector<char> reused(manifest.size(), 0);
  parallel_for(manifest.size(), cfg.worker_count(), [&](std::size_t i) {
    const auto& row = manifest[i];
    const auto fingerprint = detail::slice_fingerprint(cfg, row);
    const auto path = detail::cache_file(cache_dir, row.subject_id);
    try {
      if (!force && fs::exists(path)) {
        const auto cached = read_json(path);
        if (cached.value("fingerprint", nlohmann::json()) == fingerprint && cached.value("label", "") == row.label) {
          results[i] = subject_slices_from_json(cached);
          reused[i] = 1;
          return;
        }
      }
      auto s = select_subject_slices(row, cfg);
      write_json(path, to_json(s, fingerprint));
      results[i] = std::move(s);
    } catch (const std::exception& e) {
      failures[i] = e.what();
    }
  });

  SliceStageResult res;
  auto out = csv::open_for_write(work_dir / "slice_entropy.csv");
  out << "subject_id,slice_index,entropy,selected\n";
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    if (!results[i]) {
      res.errors.push_back({manifest[i].subject_id, failures[i]});
      continue;
    }
    const auto& s = *results[i];
    std::set<std::size_t> chosen;
    for (const auto& sl : s.selected) chosen.insert(sl.slice_index);
    auto by_index = s.ranking;
    std::sort(by_index.begin(), by_index.end(), [](const auto& a, const auto& b) { return a.slice_index < b.slice_index; });
    for (const auto& r : by_index)
      out << s.subject_id << ',' << r.slice_index << ',' << csv::format_double(r.entropy) << ','
          << (chosen.count(r.slice_index) ? 1 : 0) << '\n';
    res.processed.push_back(s.subject_id);
    if (reused[i]) res.reused.push_back(s.subject_id);
  }
  auto err = csv::open_for_write(work_dir / "slice_errors.csv");
  err << "subject_id,error\n";
  for (const auto& e : res.errors) {
    std::string msg = e.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << e.subject_id << ',' << msg << '\n';
  }
  return res;
}

// ---------------------------------------------------------------------------
// features

inline std::unique_ptr<FeatureBackend> make_backend(const PipelineConfig& cfg) {
  if (cfg.features.backend == "raw") return std::make_unique<RawPixelBackend>(cfg.features.side);
  if (cfg.features.backend == "onnx") {
    const fs::path model = cfg.features.model_path;
    const fs::path sidecar = cfg.features.sidecar_path.empty() ? default_sidecar_path(model) : fs::path(cfg.features.sidecar_path);
    return std::make_unique<OnnxBackend>(OnnxBackend::load(model, OnnxSidecar::load(sidecar)));
  }
  throw Error(Errc::InvalidConfig, "backend '" + cfg.features.backend + "' does not extract from slices");
}

/// Feature rows for every cached subject, manifest order then slice rank.
inline FeatureMatrix cmd_features(const Manifest& manifest, const PipelineConfig& cfg, const fs::path& work_dir,
                                  const fs::path& cache_dir) {
  cfg.validate();
  FeatureMatrix fm;
  if (cfg.features.backend == "precomputed") {
    fm = load_precomputed(cfg.features.features_csv);
    const std::set<std::string> allowed(cfg.labels.begin(), cfg.labels.end());
    for (const auto& l : fm.labels)
      if (!allowed.count(l)) throw Error(Errc::InvalidConfig, "feature label '" + l + "' not in configured label set");
  } else {
    const auto backend = make_backend(cfg);
    std::vector<Slice2D> slices;
    std::vector<std::string> labels;
    for (const auto& row : manifest) {
      const auto path = detail::cache_file(cache_dir, row.subject_id);
      if (!fs::exists(path))
        throw Error(Errc::IoError, "no slice cache for subject " + row.subject_id + "; run the slices stage first");
      auto s = subject_slices_from_json(read_json(path));
      for (auto& sl : s.selected) {
        slices.push_back(std::move(sl));
        labels.push_back(row.label);
      }
    }
    if (slices.empty()) throw Error(Errc::EmptyInput, "no slices selected");
    fm.values.resize(static_cast<Eigen::Index>(slices.size()), static_cast<Eigen::Index>(backend->output_dim()));
    parallel_for(slices.size(), cfg.worker_count(), [&](std::size_t i) {
      const auto v = backend->extract(slices[i]);
      if (v.size() != backend->output_dim()) throw Error(Errc::ShapeMismatch, "backend output width changed");
      fm.values.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    });
    fm.labels = std::move(labels);
    for (const auto& s : slices) fm.subject_ids.push_back(s.subject_id);
  }
  save_features(work_dir / "features.csv", fm);
  return fm;
}

// ---------------------------------------------------------------------------
// decompose

struct SplitAssignment {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

inline std::vector<SubjectRecord> subjects_of(const FeatureMatrix& fm) {
  std::vector<SubjectRecord> out;
  std::map<std::string, std::string> label_of;
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    auto [it, inserted] = label_of.emplace(fm.subject_ids[i], fm.labels[i]);
    if (inserted) out.push_back({fm.subject_ids[i], fm.labels[i]});
    else if (it->second != fm.labels[i])
      throw Error(Errc::InvalidArgument, "subject " + fm.subject_ids[i] + " has more than one class label");
  }
  return out;
}

/// Test split first, then validation carved out of the training subjects.
inline SplitAssignment assign_partitions(std::span<const SubjectRecord> subjects, const PipelineConfig& cfg) {
  const auto outer = subject_split(subjects, cfg.train_fraction, derive_seed(cfg.seed, "split"));
  SplitAssignment a{outer.train, {}, outer.test};
  if (cfg.validation_fraction > 0.0) {
    std::vector<SubjectRecord> train_records;
    const std::set<std::string> train_set(outer.train.begin(), outer.train.end());
    for (const auto& s : subjects)
      if (train_set.count(s.subject_id)) train_records.push_back(s);
    try {
      const auto inner = subject_split(train_records, 1.0 - cfg.validation_fraction, derive_seed(cfg.seed, "validation"));
      a.train = inner.train;
      a.validation = inner.test;
    } catch (const Error& e) {
      if (e.code() != Errc::TooFewSubjects) throw;
      warn("too few training subjects for a validation split; validation disabled");
    }
  }
  return a;
}

inline std::vector<std::size_t> rows_of(const FeatureMatrix& fm, std::span<const std::string> subjects) {
  const std::set<std::string> wanted(subjects.begin(), subjects.end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < fm.rows(); ++i)
    if (wanted.count(fm.subject_ids[i])) idx.push_back(i);
  return idx;
}

/// Scaler, PCA and per-class clustering, all fit on training rows only.
struct FittedDecomposition {
  ScalerParams scaler;
  PcaModel pca;
  DecomposedDataset train;  // features are the PCA-reduced training rows
};

inline FeatureMatrix reduce_features(const FeatureMatrix& raw, const ScalerParams& scaler, const PcaModel& pca) {
  return {pca_transform(apply_standardize(raw.values, scaler), pca), raw.labels, raw.subject_ids};
}

inline FittedDecomposition fit_decomposition(const FeatureMatrix& train_rows, const PipelineConfig& cfg) {
  FittedDecomposition f;
  f.scaler = fit_standardize(train_rows.values);
  f.pca = pca_fit(apply_standardize(train_rows.values, f.scaler), cfg.pca_variance_threshold);
  f.train = decompose(reduce_features(train_rows, f.scaler, f.pca), cfg.decomposition, derive_seed(cfg.seed, "decompose"),
                      cfg.labels, cfg.worker_count());
  return f;
}

inline nlohmann::json decomposition_json(const FittedDecomposition& f) { return to_json(f.train); }

inline FittedDecomposition cmd_decompose(const PipelineConfig& cfg, const fs::path& work_dir) {
  cfg.validate();
  const FeatureMatrix features = load_precomputed(work_dir / "features.csv");
  const auto subjects = subjects_of(features);
  const auto parts = assign_partitions(subjects, cfg);

  {
    auto out = csv::open_for_write(work_dir / "split.csv");
    out << "subject_id,label,partition\n";
    std::map<std::string, std::string> where;
    for (const auto& s : parts.train) where[s] = "train";
    for (const auto& s : parts.validation) where[s] = "validation";
    for (const auto& s : parts.test) where[s] = "test";
    for (const auto& s : subjects) out << s.subject_id << ',' << s.label << ',' << where[s.subject_id] << '\n';
  }

  const FeatureMatrix train_raw = features.subset(rows_of(features, parts.train));
  const auto fitted = fit_decomposition(train_raw, cfg);
  write_json(work_dir / "scaler.json", to_json(fitted.scaler));
  write_json(work_dir / "pca.json", to_json(fitted.pca));
  write_json(work_dir / "decomposition.json", decomposition_json(fitted));
  write_decomposition_report(work_dir / "decomposition_report.csv",
                             decomposition_report(fitted.train.codec, fitted.train.sublabels));
  save_sublabeled(work_dir / "sublabeled_train.csv", fitted.train.features, fitted.train.sublabels, fitted.train.codec);

  for (const auto& [name, ids] : {std::pair{"validation", &parts.validation}, std::pair{"test", &parts.test}}) {
    const fs::path path = work_dir / ("sublabeled_" + std::string(name) + ".csv");
    if (ids->empty()) {
      fs::remove(path);
      continue;
    }
    const auto reduced = reduce_features(features.subset(rows_of(features, *ids)), fitted.scaler, fitted.pca);
    save_sublabeled(path, reduced, assign_sublabels(reduced, fitted.train.codec, fitted.train.centroids), fitted.train.codec);
  }
  return fitted;
}

// ---------------------------------------------------------------------------
// train

inline LabelCodec load_codec(const fs::path& work_dir) {
  return LabelCodec::from_json(read_json(work_dir / "decomposition.json").at("codec"));
}

inline std::string cell_name(double lr) { return "lr=" + csv::format_double(lr); }

struct TrainedCell {
  double learning_rate = 0.0;
  TrainResult result;
  double train_composed_accuracy = 0.0;
  std::optional<double> validation_composed_accuracy;
};

struct TrainStageResult {
  std::vector<TrainedCell> cells;
  std::size_t selected = 0;
  std::string criterion;
};

inline TrainStageResult cmd_train(const PipelineConfig& cfg, const fs::path& work_dir) {
  cfg.validate();
  const LabelCodec codec = load_codec(work_dir);
  const auto [train_fm, train_sub] = load_sublabeled(work_dir / "sublabeled_train.csv", codec);
  std::optional<std::pair<FeatureMatrix, std::vector<int>>> val;
  if (fs::exists(work_dir / "sublabeled_validation.csv"))
    val = load_sublabeled(work_dir / "sublabeled_validation.csv", codec);

  TrainStageResult res;
  res.cells.resize(cfg.learning_rates.size());
  parallel_for(cfg.learning_rates.size(), cfg.worker_count(), [&](std::size_t c) {
    TrainConfig t = cfg.training;
    t.learning_rate = cfg.learning_rates[c];
    t.seed = derive_seed(cfg.seed, "train", c);
    std::optional<LabeledRows> v;
    if (val) v = LabeledRows{&val->first.values, val->second};
    auto& cell = res.cells[c];
    cell.learning_rate = t.learning_rate;
    cell.result = train(train_fm.values, train_sub, codec, t, v);
    cell.train_composed_accuracy =
        evaluate(cell.result.model, train_fm.values, train_sub, cfg.compose_mode).composed.accuracy;
    if (val)
      cell.validation_composed_accuracy =
          evaluate(cell.result.model, val->first.values, val->second, cfg.compose_mode).composed.accuracy;
  });

  res.criterion = val ? "validation_composed_accuracy" : "train_composed_accuracy";
  double best = -1.0;
  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    const double score = val ? *res.cells[c].validation_composed_accuracy : res.cells[c].train_composed_accuracy;
    if (score > best) {
      best = score;
      res.selected = c;
    }
  }

  fs::create_directories(work_dir / "models");
  auto curves = csv::open_for_write(work_dir / "training_curves.csv");
  curves << "cell,learning_rate,epoch,train_loss,validation_loss\n";
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t c = 0; c < res.cells.size(); ++c) {
    const auto& cell = res.cells[c];
    const std::string model_file = "models/cell" + std::to_string(c) + ".json";
    write_json(work_dir / model_file, cell.result.model.to_json());
    curves << c << ',' << csv::format_double(cell.learning_rate) << ",0," << csv::format_double(cell.result.initial_loss)
           << ",\n";
    for (std::size_t e = 0; e < cell.result.loss_curve.size(); ++e) {
      curves << c << ',' << csv::format_double(cell.learning_rate) << ',' << e + 1 << ','
             << csv::format_double(cell.result.loss_curve[e]) << ',';
      if (e < cell.result.validation_loss_curve.size()) curves << csv::format_double(cell.result.validation_loss_curve[e]);
      curves << '\n';
    }
    nlohmann::json entry{{"index", c},
                         {"name", cell_name(cell.learning_rate)},
                         {"learning_rate", cell.learning_rate},
                         {"model", model_file},
                         {"initial_loss", cell.result.initial_loss},
                         {"final_loss", cell.result.loss_curve.back()},
                         {"train_composed_accuracy", cell.train_composed_accuracy}};
    entry["validation_composed_accuracy"] =
        cell.validation_composed_accuracy ? nlohmann::json(*cell.validation_composed_accuracy) : nlohmann::json();
    cells.push_back(entry);
  }
  write_json(work_dir / "selection.json", {{"selected_cell", res.selected}, {"criterion", res.criterion}, {"cells", cells}});
  return res;
}

// ---------------------------------------------------------------------------
// evaluate

inline std::string architecture_name(const ClassifierModel& m) {
  return m.hidden_dim() ? "mlp-relu(" + std::to_string(m.hidden_dim()) + ")" : "softmax";
}

/// Evaluates every trained grid cell on the test rows; the selected cell is
/// reported as the headline. Output JSON holds no paths or timestamps.
inline nlohmann::json cmd_evaluate(const PipelineConfig& cfg, const fs::path& work_dir) {
  cfg.validate();
  const auto selection = read_json(work_dir / "selection.json");
  const LabelCodec codec = load_codec(work_dir);
  if (!fs::exists(work_dir / "sublabeled_test.csv")) throw Error(Errc::EmptyTestSet, "no test rows");
  const auto [test_fm, test_sub] = load_sublabeled(work_dir / "sublabeled_test.csv", codec);

  const auto selected = selection.at("selected_cell").get<std::size_t>();
  nlohmann::json cells = nlohmann::json::array();
  std::vector<EvalReport> reports;
  std::vector<std::string> models, names;
  for (const auto& cell : selection.at("cells")) {
    const auto model = ClassifierModel::from_json(read_json(work_dir / cell.at("model").get<std::string>()));
    if (!(model.codec() == codec)) throw Error(Errc::InvalidArgument, "model codec differs from decomposition");
    reports.push_back(evaluate(model, test_fm.values, test_sub, cfg.compose_mode));
    models.push_back(architecture_name(model));
    names.push_back(cell.at("name").get<std::string>());
    cells.push_back({{"name", cell.at("name")},
                     {"learning_rate", cell.at("learning_rate")},
                     {"validation_composed_accuracy", cell.at("validation_composed_accuracy")},
                     {"test", to_json(reports.back())}});
  }
  if (selected >= reports.size()) throw Error(Errc::ParseError, "selected_cell out of range");

  std::map<std::string, std::size_t> test_class_counts;
  for (const auto& l : test_fm.labels) ++test_class_counts[l];
  nlohmann::json metrics{{"compose_mode", to_string(cfg.compose_mode)},
                         {"selection_criterion", selection.at("criterion")},
                         {"selected_cell", names[selected]},
                         {"test_rows", test_fm.rows()},
                         {"test_class_counts", test_class_counts},
                         {"selected", to_json(reports[selected])},
                         {"cells", cells}};
  write_json(work_dir / "metrics.json", metrics);

  std::vector<ReportRow> composed_rows, sub_rows;
  for (std::size_t c = 0; c < reports.size(); ++c) {
    composed_rows.push_back({models[c], names[c] + (c == selected ? " *" : ""), &reports[c].composed});
    sub_rows.push_back({models[c], names[c] + (c == selected ? " *" : ""), &reports[c].subclass});
  }
  auto out = csv::open_for_write(work_dir / "report.txt");
  out << "Composed classes (test set, " << test_fm.rows() << " slices; * = selected by "
      << selection.at("criterion").get<std::string>() << ")\n"
      << format_table(composed_rows) << "\nSub-classes (exact match)\n"
      << format_table(sub_rows) << "\nComposed confusion matrix (selected cell)\n"
      << format_confusion(reports[selected].class_confusion) << "\nSub-class confusion matrix (selected cell)\n"
      << format_confusion(reports[selected].subclass_confusion);
  for (const auto& w : reports[selected].warnings) {
    out << "warning: " << w << '\n';
    warn(w);
  }
  return metrics;
}

// ---------------------------------------------------------------------------
// pipeline

struct PipelineResult {
  fs::path run_dir;
  nlohmann::json metrics;
};

inline fs::path make_run_dir(const fs::path& out_dir) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  fs::path dir = out_dir / "runs" / stamp;
  for (int n = 1; fs::exists(dir); ++n) dir = out_dir / "runs" / (std::string(stamp) + "-" + std::to_string(n));
  fs::create_directories(dir);
  return dir;
}

inline nlohmann::json seed_record(const PipelineConfig& cfg) {
  nlohmann::json train = nlohmann::json::array();
  for (std::size_t c = 0; c < cfg.learning_rates.size(); ++c) train.push_back(derive_seed(cfg.seed, "train", c));
  return {{"seed", cfg.seed},
          {"split", derive_seed(cfg.seed, "split")},
          {"validation", derive_seed(cfg.seed, "validation")},
          {"decompose", derive_seed(cfg.seed, "decompose")},
          {"train_cells", train}};
}

template <class F>
auto run_stage(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), "stage '" + name + "': " + e.message());
  } catch (const std::exception& e) {
    throw Error(Errc::IoError, "stage '" + name + "': " + e.what());
  }
}

/// slices -> features -> split/scaler/PCA/decompose -> train grid -> evaluate,
/// inside <out>/runs/<UTC timestamp>. The slice cache lives in <out>/cache.
inline PipelineResult cmd_pipeline(const Manifest& manifest, const PipelineConfig& cfg, const fs::path& out_dir,
                                   bool force = false) {
  cfg.validate();
  PipelineResult res{make_run_dir(out_dir), {}};
  const fs::path& run = res.run_dir;
  write_json(run / "config.json", cfg.to_json());
  write_json(run / "seeds.json", seed_record(cfg));
  Manifest snapshot = manifest;
  for (auto& row : snapshot) row.path = fs::absolute(row.path).lexically_normal();
  save_manifest(run / "manifest.csv", snapshot);

  const fs::path cache = out_dir / "cache" / "slices";
  if (cfg.features.backend != "precomputed") {
    run_stage("slices", [&] {
      const auto r = cmd_slices(manifest, cfg, run, cache, force);
      if (!r.errors.empty()) {
        std::string msg = std::to_string(r.errors.size()) + " subject(s) failed:";
        for (const auto& e : r.errors) msg += " [" + e.subject_id + ": " + e.message + "]";
        throw Error(Errc::IoError, msg);
      }
      return 0;
    });
  }
  run_stage("features", [&] { return cmd_features(manifest, cfg, run, cache); });
  run_stage("decompose", [&] { return cmd_decompose(cfg, run); });
  run_stage("train", [&] { return cmd_train(cfg, run); });
  res.metrics = run_stage("evaluate", [&] { return cmd_evaluate(cfg, run); });
  return res;
}

}  // namespace cogdecomp
