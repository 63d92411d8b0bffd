#pragma once

// Sub-class classifier: softmax head with an optional ReLU hidden layer,
// trained by mini-batch Adam on cross-entropy over the sub-class labels.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cogdecomp/class_decomposition.hpp"
#include "cogdecomp/error.hpp"
#include "cogdecomp/feature_pipeline.hpp"
#include "cogdecomp/random.hpp"

namespace cogdecomp {

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 64;  // 0 = plain softmax head

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw Error(Errc::InvalidConfig, "learning_rate must be > 0");
    if (epochs < 1) throw Error(Errc::InvalidConfig, "epochs must be >= 1");
    if (batch_size < 1) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw Error(Errc::InvalidConfig, "Adam betas must be in [0, 1)");
    if (!(epsilon > 0.0)) throw Error(Errc::InvalidConfig, "Adam epsilon must be > 0");
  }
};

enum class ComposeMode { ArgmaxStrip, ProbSum };

inline std::string_view to_string(ComposeMode m) {
  return m == ComposeMode::ArgmaxStrip ? "argmax-strip" : "prob-sum";
}

inline ComposeMode parse_compose_mode(std::string_view s) {
  if (s == "argmax-strip") return ComposeMode::ArgmaxStrip;
  if (s == "prob-sum") return ComposeMode::ProbSum;
  throw Error(Errc::InvalidConfig, "unknown compose mode '" + std::string(s) + "'");
}

/// All parameters live in one flat vector:
///   hidden:   W1 (hidden x input, row-major), b1, W2 (output x hidden), b2
///   softmax:  W (output x input, row-major), b
class ClassifierModel {
 public:
  using MatMap = Eigen::Map<RowMatrix>;
  using ConstMatMap = Eigen::Map<const RowMatrix>;

  ClassifierModel() = default;
  ClassifierModel(std::size_t input_dim, std::size_t hidden_dim, LabelCodec codec)
      : input_(input_dim), hidden_(hidden_dim), output_(codec.num_subclasses()), codec_(std::move(codec)) {
    if (input_ == 0 || output_ == 0) throw Error(Errc::InvalidArgument, "classifier dims must be positive");
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count()));
  }

  std::size_t input_dim() const noexcept { return input_; }
  std::size_t hidden_dim() const noexcept { return hidden_; }
  std::size_t output_dim() const noexcept { return output_; }
  const LabelCodec& codec() const noexcept { return codec_; }

  std::size_t parameter_count() const noexcept {
    return hidden_ ? hidden_ * input_ + hidden_ + output_ * hidden_ + output_
                   : output_ * input_ + output_;
  }

  Eigen::VectorXd& parameters() noexcept { return params_; }
  const Eigen::VectorXd& parameters() const noexcept { return params_; }

  /// Seeded initialization: He-normal for the hidden layer, Xavier-normal for
  /// the output layer, zero biases.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "classifier-init"));
    params_.setZero();
    const std::size_t fan_out_in = hidden_ ? hidden_ : input_;
    if (hidden_) {
      auto w1 = weights(0);
      const double s1 = std::sqrt(2.0 / static_cast<double>(input_));
      for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = s1 * rng.normal();
    }
    auto w = weights(hidden_ ? 1 : 0);
    const double s2 = std::sqrt(2.0 / static_cast<double>(fan_out_in + output_));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = s2 * rng.normal();
  }

  /// Layer views into the flat parameter vector (layer 0 is the first).
  MatMap weights(int layer) { return MatMap(params_.data() + offset(layer), rows(layer), cols(layer)); }
  ConstMatMap weights(int layer) const {
    return ConstMatMap(params_.data() + offset(layer), rows(layer), cols(layer));
  }
  Eigen::Map<Eigen::VectorXd> bias(int layer) {
    return {params_.data() + offset(layer) + rows(layer) * cols(layer), rows(layer)};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int layer) const {
    return {params_.data() + offset(layer) + rows(layer) * cols(layer), rows(layer)};
  }
  int layers() const noexcept { return hidden_ ? 2 : 1; }

  /// Row-wise softmax probabilities for a batch.
  RowMatrix predict_proba(const RowMatrix& X) const {
    Forward f = forward(X);
    return std::move(f.probs);
  }

  struct Forward {
    RowMatrix pre_hidden;  // empty without a hidden layer
    RowMatrix hidden;
    RowMatrix probs;
  };

  Forward forward(const RowMatrix& X) const {
    if (static_cast<std::size_t>(X.cols()) != input_)
      throw Error(Errc::DimMismatch, "expected " + std::to_string(input_) + " features, got " +
                                         std::to_string(X.cols()));
    Forward f;
    RowMatrix logits;
    if (hidden_) {
      f.pre_hidden = (X * weights(0).transpose()).rowwise() + bias(0).transpose();
      f.hidden = f.pre_hidden.cwiseMax(0.0);
      logits = (f.hidden * weights(1).transpose()).rowwise() + bias(1).transpose();
    } else {
      logits = (X * weights(0).transpose()).rowwise() + bias(0).transpose();
    }
    const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    f.probs = (logits.colwise() - row_max).array().exp().matrix();
    const Eigen::VectorXd sums = f.probs.rowwise().sum();
    for (Eigen::Index r = 0; r < f.probs.rows(); ++r) f.probs.row(r) /= sums(r);
    return f;
  }

  nlohmann::json to_json() const {
    nlohmann::json layers_json = nlohmann::json::array();
    for (int l = 0; l < layers(); ++l) {
      const RowMatrix w = weights(l);
      const Eigen::VectorXd b = bias(l);
      layers_json.push_back({{"weights", detail::to_json_matrix(w)}, {"bias", detail::to_json_vector(b)}});
    }
    return {{"format", "cogdecomp-classifier"},
            {"version", 1},
            {"architecture", hidden_ ? "mlp-relu" : "softmax"},
            {"input_dim", input_},
            {"hidden_dim", hidden_},
            {"output_dim", output_},
            {"layers", layers_json},
            {"codec", codec_.to_json()}};
  }

  static ClassifierModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "cogdecomp-classifier")
      throw Error(Errc::ParseError, "not a classifier checkpoint");
    ClassifierModel m(j.at("input_dim").get<std::size_t>(), j.at("hidden_dim").get<std::size_t>(),
                      LabelCodec::from_json(j.at("codec")));
    if (m.output_dim() != j.at("output_dim").get<std::size_t>())
      throw Error(Errc::ParseError, "output_dim disagrees with codec");
    const auto& layers_json = j.at("layers");
    if (static_cast<int>(layers_json.size()) != m.layers()) throw Error(Errc::ParseError, "layer count mismatch");
    for (int l = 0; l < m.layers(); ++l) {
      const RowMatrix w = detail::matrix_from_json(layers_json[static_cast<std::size_t>(l)].at("weights"), m.cols(l));
      const Eigen::VectorXd b = detail::vector_from_json(layers_json[static_cast<std::size_t>(l)].at("bias"));
      if (w.rows() != m.rows(l) || w.cols() != m.cols(l) || b.size() != m.rows(l))
        throw Error(Errc::ParseError, "layer shape mismatch");
      m.weights(l) = w;
      m.bias(l) = b;
    }
    return m;
  }

 private:
  Eigen::Index rows(int layer) const {
    return static_cast<Eigen::Index>(hidden_ && layer == 0 ? hidden_ : output_);
  }
  Eigen::Index cols(int layer) const {
    return static_cast<Eigen::Index>(hidden_ && layer == 1 ? hidden_ : input_);
  }
  Eigen::Index offset(int layer) const {
    return layer == 0 ? 0 : static_cast<Eigen::Index>(hidden_ * input_ + hidden_);
  }

  std::size_t input_ = 0;
  std::size_t hidden_ = 0;
  std::size_t output_ = 0;
  LabelCodec codec_;
  Eigen::VectorXd params_;
};

/// Mean cross-entropy of a batch and its gradient w.r.t. the flat parameters.
inline std::pair<double, Eigen::VectorXd> loss_and_gradient(const ClassifierModel& model, const RowMatrix& X,
                                                            std::span<const int> targets) {
  if (X.rows() == 0) throw Error(Errc::EmptyInput, "empty batch");
  if (static_cast<std::size_t>(X.rows()) != targets.size()) throw Error(Errc::DimMismatch, "batch/target size mismatch");
  const auto f = model.forward(X);
  const auto B = static_cast<double>(X.rows());

  double loss = 0.0;
  RowMatrix delta = f.probs;  // becomes (P - Y) / B
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || static_cast<std::size_t>(t) >= model.output_dim())
      throw Error(Errc::UnknownSublabel, "target " + std::to_string(t));
    loss -= std::log(std::max(f.probs(r, t), std::numeric_limits<double>::min()));
    delta(r, t) -= 1.0;
  }
  loss /= B;
  delta /= B;

  ClassifierModel grad = model;
  grad.parameters().setZero();
  if (model.hidden_dim()) {
    grad.weights(1) = delta.transpose() * f.hidden;
    grad.bias(1) = delta.colwise().sum().transpose();
    RowMatrix dz = (delta * model.weights(1)).cwiseProduct(
        (f.pre_hidden.array() > 0.0).cast<double>().matrix());
    grad.weights(0) = dz.transpose() * X;
    grad.bias(0) = dz.colwise().sum().transpose();
  } else {
    grad.weights(0) = delta.transpose() * X;
    grad.bias(0) = delta.colwise().sum().transpose();
  }
  return {loss, std::move(grad.parameters())};
}

inline double mean_loss(const ClassifierModel& model, const RowMatrix& X, std::span<const int> targets) {
  return loss_and_gradient(model, X, targets).first;
}

/// Largest relative discrepancy between analytic gradients and central finite
/// differences (step 1e-5). Relative error is |a - n| / max(|a|, |n|, 1e-8).
inline double gradient_check(const ClassifierModel& model, const RowMatrix& X, std::span<const int> targets,
                             double step = 1e-5) {
  const auto [loss, analytic] = loss_and_gradient(model, X, targets);
  (void)loss;
  ClassifierModel probe = model;
  double worst = 0.0;
  for (Eigen::Index p = 0; p < analytic.size(); ++p) {
    const double saved = probe.parameters()(p);
    probe.parameters()(p) = saved + step;
    const double up = mean_loss(probe, X, targets);
    probe.parameters()(p) = saved - step;
    const double down = mean_loss(probe, X, targets);
    probe.parameters()(p) = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic(p)), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic(p) - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Prediction and composition

inline Eigen::VectorXd predict_subclass(const ClassifierModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim())
    throw Error(Errc::DimMismatch, "expected " + std::to_string(model.input_dim()) + " features, got " +
                                       std::to_string(x.size()));
  RowMatrix row = Eigen::Map<const RowMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return model.predict_proba(row).row(0).transpose();
}

/// Class index from a sub-class probability vector. ArgmaxStrip takes the most
/// probable sub-class and drops its cluster; ProbSum sums probabilities per
/// class first. Ties resolve to the lower index.
inline std::size_t compose_prediction(const Eigen::VectorXd& probs, const LabelCodec& codec, ComposeMode mode) {
  if (static_cast<std::size_t>(probs.size()) != codec.num_subclasses())
    throw Error(Errc::DimMismatch, "probability vector does not match codec");
  if (mode == ComposeMode::ArgmaxStrip) {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return codec.class_of(static_cast<int>(best));
  }
  Eigen::VectorXd per_class = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(codec.num_classes()));
  for (Eigen::Index s = 0; s < probs.size(); ++s) per_class(static_cast<Eigen::Index>(codec.class_of(static_cast<int>(s)))) += probs(s);
  Eigen::Index best = 0;
  per_class.maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

inline const std::string& predict_composed(const ClassifierModel& model, std::span<const double> x,
                                           ComposeMode mode = ComposeMode::ArgmaxStrip) {
  return model.codec().class_label(compose_prediction(predict_subclass(model, x), model.codec(), mode));
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  ClassifierModel model;
  double initial_loss = 0.0;
  std::vector<double> loss_curve;             // full training-set loss after each epoch
  std::vector<double> validation_loss_curve;  // empty without validation data
};

struct LabeledRows {
  const RowMatrix* features = nullptr;
  std::span<const int> sublabels;
};

/// Mini-batch Adam on cross-entropy. The shuffle order and initialization are
/// derived from cfg.seed, so a run is reproducible bit for bit.
inline TrainResult train(const RowMatrix& X, std::span<const int> sublabels, const LabelCodec& codec,
                         const TrainConfig& cfg, std::optional<LabeledRows> validation = std::nullopt) {
  cfg.validate();
  if (X.rows() == 0) throw Error(Errc::EmptyInput, "no training rows");
  if (static_cast<std::size_t>(X.rows()) != sublabels.size()) throw Error(Errc::DimMismatch, "rows/sublabels mismatch");
  std::vector<std::size_t> present(codec.num_subclasses(), 0);
  for (int s : sublabels) {
    codec.decode(s);
    ++present[static_cast<std::size_t>(s)];
  }
  for (std::size_t s = 0; s < present.size(); ++s)
    if (present[s] == 0)
      throw Error(Errc::MissingSubclass, "sub-class " + codec.subclass_name(static_cast<int>(s)) +
                                             " has no training rows");

  TrainResult res{ClassifierModel(static_cast<std::size_t>(X.cols()), cfg.hidden_dim, codec), 0.0, {}, {}};
  auto& model = res.model;
  model.initialize(cfg.seed);
  res.initial_loss = mean_loss(model, X, sublabels);

  Eigen::VectorXd m = Eigen::VectorXd::Zero(model.parameters().size());
  Eigen::VectorXd v = m;
  double beta1_t = 1.0;
  double beta2_t = 1.0;

  Rng rng(derive_seed(cfg.seed, "train-shuffle"));
  std::vector<std::size_t> order(static_cast<std::size_t>(X.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  RowMatrix batch;
  std::vector<int> batch_targets;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.resize(static_cast<Eigen::Index>(end - start), X.cols());
      batch_targets.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch.row(static_cast<Eigen::Index>(i - start)) = X.row(static_cast<Eigen::Index>(order[i]));
        batch_targets.push_back(sublabels[order[i]]);
      }
      const auto [loss, g] = loss_and_gradient(model, batch, batch_targets);
      (void)loss;
      beta1_t *= cfg.beta1;
      beta2_t *= cfg.beta2;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
      const double m_scale = 1.0 / (1.0 - beta1_t);
      const double v_scale = 1.0 / (1.0 - beta2_t);
      model.parameters().array() -=
          cfg.learning_rate * (m.array() * m_scale) / ((v.array() * v_scale).sqrt() + cfg.epsilon);
    }
    res.loss_curve.push_back(mean_loss(model, X, sublabels));
    if (validation && validation->features && validation->features->rows() > 0)
      res.validation_loss_curve.push_back(mean_loss(model, *validation->features, validation->sublabels));
  }
  return res;
}

}  // namespace cogdecomp
