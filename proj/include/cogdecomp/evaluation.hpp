#pragma once

// Confusion matrices and accuracy / one-vs-rest sensitivity and specificity.

#include <cstdio>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cogdecomp/class_decomposition.hpp"
#include "cogdecomp/classifier.hpp"
#include "cogdecomp/error.hpp"

namespace cogdecomp {

/// counts[t][p]: rows with true label t predicted as p.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(std::vector<std::string> l = {})
      : labels(std::move(l)), counts(labels.size(), std::vector<std::size_t>(labels.size(), 0)) {}

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts)
      for (auto c : row) t += c;
    return t;
  }
  void add(std::size_t truth, std::size_t predicted) { ++counts.at(truth).at(predicted); }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ClassMetrics {
  std::string label;
  std::size_t support = 0;  // rows whose true label is this class
  double sensitivity = 0.0;
  double specificity = 0.0;
};

struct MetricSummary {
  double accuracy = 0.0;
  double macro_sensitivity = 0.0;
  double macro_specificity = 0.0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::string> excluded;  // classes absent from the evaluation set
};

/// Accuracy = trace / total; macro averages skip classes with zero support.
/// Exclusions go to `warnings` when given, otherwise to the warning sink.
inline MetricSummary summarize(const ConfusionMatrix& cm, std::vector<std::string>* warnings = nullptr) {
  const std::size_t total = cm.total();
  if (total == 0) throw Error(Errc::EmptyTestSet, "confusion matrix is empty");
  const std::size_t n = cm.labels.size();
  std::vector<std::size_t> row_sum(n, 0), col_sum(n, 0);
  std::size_t trace = 0;
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t p = 0; p < n; ++p) {
      row_sum[t] += cm.counts[t][p];
      col_sum[p] += cm.counts[t][p];
    }
    trace += cm.counts[t][t];
  }
  MetricSummary s;
  s.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  std::size_t included = 0;
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t tp = cm.counts[c][c];
    const std::size_t fn = row_sum[c] - tp;
    const std::size_t fp = col_sum[c] - tp;
    const std::size_t tn = total - tp - fn - fp;
    ClassMetrics m{cm.labels[c], row_sum[c], 0.0, 0.0};
    if (row_sum[c] == 0) {
      s.excluded.push_back(cm.labels[c]);
      const std::string msg = "class " + cm.labels[c] + " absent from evaluation set; excluded from macro averages";
      if (warnings) warnings->push_back(msg);
      else warn(msg);
    } else {
      m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
      m.specificity = tn + fp > 0 ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 1.0;
      s.macro_sensitivity += m.sensitivity;
      s.macro_specificity += m.specificity;
      ++included;
    }
    s.per_class.push_back(m);
  }
  s.macro_sensitivity /= static_cast<double>(included);
  s.macro_specificity /= static_cast<double>(included);
  return s;
}

inline ConfusionMatrix confusion_from_labels(std::span<const std::string> truth,
                                             std::span<const std::string> predicted,
                                             std::vector<std::string> labels) {
  if (truth.size() != predicted.size()) throw Error(Errc::DimMismatch, "truth/prediction length mismatch");
  ConfusionMatrix cm(std::move(labels));
  auto index_of = [&](const std::string& l) {
    for (std::size_t i = 0; i < cm.labels.size(); ++i)
      if (cm.labels[i] == l) return i;
    throw Error(Errc::InvalidArgument, "label " + l + " not in label set");
  };
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(index_of(truth[i]), index_of(predicted[i]));
  return cm;
}

/// Folds a sub-class confusion matrix onto classes through the codec.
inline ConfusionMatrix aggregate_to_classes(const ConfusionMatrix& sub, const LabelCodec& codec) {
  ConfusionMatrix out(codec.classes());
  for (std::size_t t = 0; t < sub.counts.size(); ++t)
    for (std::size_t p = 0; p < sub.counts.size(); ++p)
      out.counts[codec.class_of(static_cast<int>(t))][codec.class_of(static_cast<int>(p))] += sub.counts[t][p];
  return out;
}

struct EvalReport {
  ComposeMode mode = ComposeMode::ArgmaxStrip;
  ConfusionMatrix subclass_confusion;
  MetricSummary subclass;
  ConfusionMatrix class_confusion;
  MetricSummary composed;
  std::vector<std::string> warnings;
};

/// Evaluates a model on rows with known classes and (assigned) sub-classes.
inline EvalReport evaluate(const ClassifierModel& model, const RowMatrix& X, std::span<const int> true_sublabels,
                           ComposeMode mode = ComposeMode::ArgmaxStrip) {
  if (X.rows() == 0) throw Error(Errc::EmptyTestSet, "no evaluation rows");
  if (static_cast<std::size_t>(X.rows()) != true_sublabels.size())
    throw Error(Errc::DimMismatch, "rows/sublabels mismatch");
  const LabelCodec& codec = model.codec();
  std::vector<std::string> sub_names;
  for (std::size_t s = 0; s < codec.num_subclasses(); ++s) sub_names.push_back(codec.subclass_name(static_cast<int>(s)));

  EvalReport r{mode, ConfusionMatrix(sub_names), {}, ConfusionMatrix(codec.classes()), {}, {}};
  const RowMatrix probs = model.predict_proba(X);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const int truth = true_sublabels[static_cast<std::size_t>(i)];
    Eigen::Index pred = 0;
    probs.row(i).maxCoeff(&pred);
    r.subclass_confusion.add(static_cast<std::size_t>(truth), static_cast<std::size_t>(pred));
    const Eigen::VectorXd p = probs.row(i).transpose();
    r.class_confusion.add(codec.class_of(truth), compose_prediction(p, codec, mode));
  }
  r.subclass = summarize(r.subclass_confusion, &r.warnings);
  r.composed = summarize(r.class_confusion, &r.warnings);
  return r;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"labels", cm.labels}, {"counts", cm.counts}};
}

inline nlohmann::json to_json(const MetricSummary& s) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& c : s.per_class)
    per.push_back({{"label", c.label}, {"support", c.support}, {"sensitivity", c.sensitivity}, {"specificity", c.specificity}});
  return {{"accuracy", s.accuracy},
          {"macro_sensitivity", s.macro_sensitivity},
          {"macro_specificity", s.macro_specificity},
          {"per_class", per},
          {"excluded_classes", s.excluded}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"compose_mode", to_string(r.mode)},
          {"subclass", {{"confusion", to_json(r.subclass_confusion)}, {"metrics", to_json(r.subclass)}}},
          {"composed", {{"confusion", to_json(r.class_confusion)}, {"metrics", to_json(r.composed)}}},
          {"warnings", r.warnings}};
}

/// One line of the results table.
struct ReportRow {
  std::string model;
  std::string grid_cell;
  const MetricSummary* metrics = nullptr;
};

/// Plain-text table: model, grid cell, accuracy, specificity, sensitivity (%).
inline std::string format_table(std::span<const ReportRow> rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %-22s %12s %15s %15s\n", "Model", "Grid cell", "Accuracy(%)",
                "Specificity(%)", "Sensitivity(%)");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %-22s %12.2f %15.2f %15.2f\n", r.model.c_str(), r.grid_cell.c_str(),
                  100.0 * r.metrics->accuracy, 100.0 * r.metrics->macro_specificity,
                  100.0 * r.metrics->macro_sensitivity);
    out << line;
  }
  return out.str();
}

inline std::string format_confusion(const ConfusionMatrix& cm) {
  std::ostringstream out;
  char cell[64];
  std::snprintf(cell, sizeof cell, "%-10s", "true\\pred");
  out << cell;
  for (const auto& l : cm.labels) {
    std::snprintf(cell, sizeof cell, " %8s", l.c_str());
    out << cell;
  }
  out << '\n';
  for (std::size_t t = 0; t < cm.labels.size(); ++t) {
    std::snprintf(cell, sizeof cell, "%-10s", cm.labels[t].c_str());
    out << cell;
    for (auto c : cm.counts[t]) {
      std::snprintf(cell, sizeof cell, " %8zu", c);
      out << cell;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cogdecomp
