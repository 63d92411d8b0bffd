#include <gtest/gtest.h>

#include "cogdecomp/evaluation.hpp"
#include "cogdecomp/random.hpp"

using namespace cogdecomp;

namespace {

std::vector<std::string> v(std::initializer_list<const char*> l) { return {l.begin(), l.end()}; }

}  // namespace

TEST(Metrics, HandBuiltThreeClassExample) {
  const auto cm = confusion_from_labels(v({"AD", "AD", "MCI", "CN"}), v({"AD", "MCI", "MCI", "CN"}), v({"AD", "MCI", "CN"}));
  EXPECT_EQ(cm.counts, (std::vector<std::vector<std::size_t>>{{1, 1, 0}, {0, 1, 0}, {0, 0, 1}}));
  const auto s = summarize(cm);
  EXPECT_DOUBLE_EQ(s.accuracy, 0.75);
  EXPECT_NEAR(s.macro_sensitivity, (0.5 + 1.0 + 1.0) / 3.0, 1e-15);
  EXPECT_NEAR(s.macro_specificity, (1.0 + 2.0 / 3.0 + 1.0) / 3.0, 1e-15);
  EXPECT_NEAR(s.macro_sensitivity, 0.8333, 1e-4);
  EXPECT_NEAR(s.macro_specificity, 0.8889, 1e-4);
  EXPECT_DOUBLE_EQ(s.per_class[0].sensitivity, 0.5);
  EXPECT_DOUBLE_EQ(s.per_class[1].specificity, 2.0 / 3.0);
}

TEST(Metrics, PerfectPredictions) {
  const auto labels = v({"CN", "MCI", "AD", "AD"});
  const auto s = summarize(confusion_from_labels(labels, labels, v({"CN", "MCI", "AD"})));
  EXPECT_EQ(s.accuracy, 1.0);
  EXPECT_EQ(s.macro_sensitivity, 1.0);
  EXPECT_EQ(s.macro_specificity, 1.0);
}

TEST(Metrics, AbsentClassExcludedWithWarning) {
  std::vector<std::string> warnings;
  const auto s = summarize(confusion_from_labels(v({"CN", "AD"}), v({"CN", "CN"}), v({"CN", "MCI", "AD"})), &warnings);
  ASSERT_EQ(s.excluded, v({"MCI"}));
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_DOUBLE_EQ(s.macro_sensitivity, 0.5);
  EXPECT_DOUBLE_EQ(s.macro_specificity, 0.5);
}

TEST(Metrics, EmptyAndUnknownLabel) {
  try {
    summarize(ConfusionMatrix(v({"A"})));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyTestSet);
  }
  EXPECT_THROW(confusion_from_labels(v({"X"}), v({"A"}), v({"A"})), Error);
}

TEST(Evaluate, ComposedMatrixIsAggregatedSubclassMatrix) {
  LabelCodec codec({"CN", "MCI", "AD"}, {2, 2, 2});
  ClassifierModel m(3, 0, codec);
  m.initialize(9);
  Rng rng(12);
  RowMatrix X(60, 3);
  for (auto& x : X.reshaped()) x = rng.normal() * 3;
  std::vector<int> truth;
  for (int i = 0; i < 60; ++i) truth.push_back(i % 6);
  for (ComposeMode mode : {ComposeMode::ArgmaxStrip, ComposeMode::ProbSum}) {
    const auto r = evaluate(m, X, truth, mode);
    EXPECT_EQ(r.subclass_confusion.total(), 60u);
    EXPECT_EQ(r.class_confusion.total(), 60u);
    if (mode == ComposeMode::ArgmaxStrip) {
      EXPECT_EQ(r.class_confusion, aggregate_to_classes(r.subclass_confusion, codec));
      EXPECT_GE(r.composed.accuracy, r.subclass.accuracy);
    }
  }
}

TEST(Evaluate, ReportFormatting) {
  const auto cm = confusion_from_labels(v({"AD", "CN"}), v({"AD", "AD"}), v({"AD", "CN"}));
  const auto s = summarize(cm);
  const std::vector<ReportRow> rows{{"softmax", "lr=0.01", &s}};
  const auto table = format_table(rows);
  EXPECT_NE(table.find("Accuracy(%)"), std::string::npos);
  EXPECT_NE(table.find("50.00"), std::string::npos);
  EXPECT_NE(format_confusion(cm).find("AD"), std::string::npos);
  const auto j = to_json(s);
  EXPECT_EQ(j.at("accuracy").get<double>(), 0.5);
}
