#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cogdecomp/classifier.hpp"
#include "cogdecomp/random.hpp"
#include "oracles.hpp"

using namespace cogdecomp;

namespace {

// Plain-loop cross-entropy over the documented flat parameter layout.
double reference_loss(const std::vector<double>& p, std::size_t in, std::size_t hidden, std::size_t out,
                      const RowMatrix& X, std::span<const int> y) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    std::vector<double> h(X.row(r).data(), X.row(r).data() + in);
    std::size_t width = in, off = 0;
    if (hidden) {
      std::vector<double> a(hidden);
      for (std::size_t j = 0; j < hidden; ++j) {
        double s = p[hidden * in + j];
        for (std::size_t i = 0; i < in; ++i) s += p[j * in + i] * h[i];
        a[j] = s > 0 ? s : 0.0;
      }
      h = a;
      width = hidden;
      off = hidden * in + hidden;
    }
    std::vector<double> logits(out);
    for (std::size_t k = 0; k < out; ++k) {
      double s = p[off + out * width + k];
      for (std::size_t i = 0; i < width; ++i) s += p[off + k * width + i] * h[i];
      logits[k] = s;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    total -= logits[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])] - mx - std::log(z);
  }
  return total / static_cast<double>(X.rows());
}

RowMatrix random_rows(Eigen::Index n, Eigen::Index m, Rng& rng) {
  RowMatrix X(n, m);
  for (auto& v : X.reshaped()) v = rng.normal();
  return X;
}

LabelCodec codec_2x2() { return LabelCodec({"CN", "AD"}, {2, 2}); }

Errc error_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::IoError;
}

}  // namespace

TEST(TrainConfig, RejectsBadValues) {
  TrainConfig c;
  c.learning_rate = 0.0;
  EXPECT_EQ(error_of([&] { c.validate(); }), Errc::InvalidConfig);
  c = {};
  c.batch_size = 0;
  EXPECT_EQ(error_of([&] { c.validate(); }), Errc::InvalidConfig);
  c = {};
  c.beta2 = 1.0;
  EXPECT_EQ(error_of([&] { c.validate(); }), Errc::InvalidConfig);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Classifier, ZeroWeightsGiveUniformProbabilities) {
  ClassifierModel m(3, 0, codec_2x2());
  const std::vector<double> x{1.0, -2.0, 0.5};
  const auto p = predict_subclass(m, x);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(p(i), 0.25);
  EXPECT_EQ(error_of([&] { predict_subclass(m, std::vector<double>{1.0}); }), Errc::DimMismatch);
}

TEST(Classifier, ProbabilitiesSumToOneAndDuplicateRowsAgree) {
  Rng rng(4);
  for (std::size_t hidden : {0u, 8u}) {
    ClassifierModel m(5, hidden, codec_2x2());
    m.initialize(11);
    RowMatrix X = random_rows(6, 5, rng);
    X.row(5) = X.row(2);
    const RowMatrix P = m.predict_proba(X);
    for (Eigen::Index r = 0; r < P.rows(); ++r) EXPECT_NEAR(P.row(r).sum(), 1.0, 1e-6);
    EXPECT_EQ(P.row(5), P.row(2));
  }
}

TEST(Classifier, ZeroWeightGradientIsPMinusY) {
  // p is uniform (1/4), so dL/db = mean(p - y) and dL/dW = (p - y)^T X / B.
  ClassifierModel m(2, 0, codec_2x2());
  RowMatrix X(2, 2);
  X << 1, 0, 0, 1;
  const std::vector<int> y{0, 3};
  const auto [loss, g] = loss_and_gradient(m, X, y);
  EXPECT_NEAR(loss, std::log(4.0), 1e-15);
  const double w_expected[4][2] = {{-0.375, 0.125}, {0.125, 0.125}, {0.125, 0.125}, {0.125, -0.375}};
  const double b_expected[4] = {-0.25, 0.25, 0.25, -0.25};
  ClassifierModel grad = m;
  grad.parameters() = g;
  for (int k = 0; k < 4; ++k) {
    for (int i = 0; i < 2; ++i) EXPECT_NEAR(grad.weights(0)(k, i), w_expected[k][i], 1e-15);
    EXPECT_NEAR(grad.bias(0)(k), b_expected[k], 1e-15);
  }
}

TEST(Classifier, LossMatchesReference) {
  Rng rng(8);
  for (std::size_t hidden : {0u, 6u}) {
    ClassifierModel m(4, hidden, codec_2x2());
    m.initialize(3);
    const RowMatrix X = random_rows(9, 4, rng);
    std::vector<int> y;
    for (int i = 0; i < 9; ++i) y.push_back(i % 4);
    const std::vector<double> p(m.parameters().data(), m.parameters().data() + m.parameters().size());
    EXPECT_NEAR(mean_loss(m, X, y), reference_loss(p, 4, hidden, 4, X, y), 1e-12);
  }
}

TEST(Classifier, GradientAgreesWithFiniteDifferences) {
  Rng rng(21);
  for (std::size_t hidden : {0u, 5u}) {
    ClassifierModel m(3, hidden, codec_2x2());
    m.initialize(hidden + 1);
    const RowMatrix X = random_rows(7, 3, rng);
    const std::vector<int> y{0, 1, 2, 3, 0, 1, 2};
    EXPECT_LT(gradient_check(m, X, y), 1e-4);
    const auto [loss, g] = loss_and_gradient(m, X, y);
    const std::vector<double> p(m.parameters().data(), m.parameters().data() + m.parameters().size());
    auto f = [&](const std::vector<double>& q) { return reference_loss(q, 3, hidden, 4, X, y); };
    for (std::size_t i = 0; i < p.size(); ++i)
      EXPECT_NEAR(g(static_cast<Eigen::Index>(i)), oracle::central_difference(f, p, i, 1e-5), 1e-7) << i;
  }
}

TEST(Classifier, JsonRoundTrip) {
  ClassifierModel m(3, 4, codec_2x2());
  m.initialize(5);
  const auto back = ClassifierModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.parameters(), m.parameters());
  EXPECT_EQ(back.codec(), m.codec());
  EXPECT_EQ(back.hidden_dim(), 4u);
  auto j = m.to_json();
  j["format"] = "other";
  EXPECT_EQ(error_of([&] { ClassifierModel::from_json(j); }), Errc::ParseError);
}

TEST(Compose, ArgmaxStripVersusProbSum) {
  LabelCodec codec({"AD", "MCI", "CN"}, {2, 2, 2});
  Eigen::VectorXd p(6);
  p << 0.3, 0.1, 0.25, 0.25, 0.05, 0.05;
  EXPECT_EQ(codec.class_label(compose_prediction(p, codec, ComposeMode::ArgmaxStrip)), "AD");
  EXPECT_EQ(codec.class_label(compose_prediction(p, codec, ComposeMode::ProbSum)), "MCI");
  Eigen::VectorXd q = Eigen::VectorXd::Zero(6);
  q(5) = 1.0;
  EXPECT_EQ(codec.class_label(compose_prediction(q, codec, ComposeMode::ArgmaxStrip)), "CN");
  EXPECT_EQ(codec.class_label(compose_prediction(q, codec, ComposeMode::ProbSum)), "CN");
  EXPECT_EQ(parse_compose_mode("prob-sum"), ComposeMode::ProbSum);
  EXPECT_EQ(error_of([] { parse_compose_mode("vote"); }), Errc::InvalidConfig);
}

TEST(Train, SeparableBlobsReachFullAccuracy) {
  Rng rng(13);
  LabelCodec codec({"A"}, {2});
  RowMatrix X(80, 2);
  std::vector<int> y;
  for (Eigen::Index i = 0; i < 80; ++i) {
    const int c = static_cast<int>(i % 2);
    X(i, 0) = rng.normal() * 0.5 + (c ? 3.0 : -3.0);
    X(i, 1) = rng.normal() * 0.5;
    y.push_back(c);
  }
  for (std::size_t hidden : {0u, 16u}) {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.hidden_dim = hidden;
    cfg.seed = 3;
    const auto r = train(X, y, codec, cfg);
    ASSERT_EQ(r.loss_curve.size(), 200u);
    EXPECT_LT(r.loss_curve.back(), r.initial_loss);
    const RowMatrix P = r.model.predict_proba(X);
    for (Eigen::Index i = 0; i < 80; ++i) {
      Eigen::Index arg;
      P.row(i).maxCoeff(&arg);
      EXPECT_EQ(arg, y[static_cast<std::size_t>(i)]);
    }
  }
}

TEST(Train, DeterministicAndTracksValidation) {
  Rng rng(2);
  const RowMatrix X = random_rows(30, 3, rng);
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) y.push_back(i % 4);
  const RowMatrix V = random_rows(5, 3, rng);
  const std::vector<int> vy{0, 1, 2, 3, 0};
  TrainConfig cfg;
  cfg.epochs = 7;
  cfg.batch_size = 8;
  cfg.hidden_dim = 4;
  const auto a = train(X, y, codec_2x2(), cfg, LabeledRows{&V, vy});
  const auto b = train(X, y, codec_2x2(), cfg, LabeledRows{&V, vy});
  EXPECT_EQ(a.model.parameters(), b.model.parameters());
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.validation_loss_curve.size(), 7u);
  cfg.seed = 1;
  EXPECT_NE(train(X, y, codec_2x2(), cfg).model.parameters(), a.model.parameters());
}

TEST(Train, MissingSubclass) {
  Rng rng(2);
  const RowMatrix X = random_rows(4, 2, rng);
  const std::vector<int> y{0, 1, 2, 2};
  EXPECT_EQ(error_of([&] { train(X, y, codec_2x2(), {}); }), Errc::MissingSubclass);
}
