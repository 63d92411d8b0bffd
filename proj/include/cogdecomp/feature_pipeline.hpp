#pragma once

// Slice feature extraction, standardization and PCA reduction.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <vector>

#include "cogdecomp/csv.hpp"
#include "cogdecomp/error.hpp"
#include "cogdecomp/volume_io.hpp"

namespace cogdecomp {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// n x m feature rows with aligned class labels and subject identities.
struct FeatureMatrix {
  RowMatrix values;
  std::vector<std::string> labels;
  std::vector<std::string> subject_ids;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(values.cols()); }

  void validate() const {
    if (labels.size() != rows() || subject_ids.size() != rows())
      throw Error(Errc::DimMismatch, "labels/subject_ids/rows length mismatch");
    if (!values.allFinite()) throw Error(Errc::InvalidData, "non-finite feature value");
  }

  /// Rows at the given indices, in that order.
  FeatureMatrix subset(std::span<const std::size_t> idx) const {
    FeatureMatrix out;
    out.values.resize(static_cast<Eigen::Index>(idx.size()), values.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.values.row(static_cast<Eigen::Index>(i)) = values.row(static_cast<Eigen::Index>(idx[i]));
      out.labels.push_back(labels[idx[i]]);
      out.subject_ids.push_back(subject_ids[idx[i]]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Resampling and backends

/// Bilinear resampling with corner-aligned sample positions, so an
/// equal-size resample is the identity.
inline Grid<double> resample_bilinear(const Grid<double>& in, std::size_t rows, std::size_t cols) {
  if (in.empty()) throw Error(Errc::InvalidArgument, "cannot resample an empty slice");
  Grid<double> out(rows, cols);
  auto source = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    if (n_out <= 1 || n_in <= 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };
  for (std::size_t r = 0; r < rows; ++r) {
    const double sr = source(r, rows, in.rows());
    const auto r0 = std::min(static_cast<std::size_t>(sr), in.rows() - 1);
    const auto r1 = std::min(r0 + 1, in.rows() - 1);
    const double fr = sr - static_cast<double>(r0);
    for (std::size_t c = 0; c < cols; ++c) {
      const double sc = source(c, cols, in.cols());
      const auto c0 = std::min(static_cast<std::size_t>(sc), in.cols() - 1);
      const auto c1 = std::min(c0 + 1, in.cols() - 1);
      const double fc = sc - static_cast<double>(c0);
      const double top = in(r0, c0) + fc * (in(r0, c1) - in(r0, c0));
      const double bottom = in(r1, c0) + fc * (in(r1, c1) - in(r1, c0));
      out(r, c) = top + fr * (bottom - top);
    }
  }
  return out;
}

/// Raw-pixel features: side x side bilinear resample, flattened row-major.
inline std::vector<double> extract_raw(const Slice2D& s, std::size_t side) {
  if (side < 2) throw Error(Errc::InvalidSide, "side must be >= 2");
  return resample_bilinear(s.pixels, side, side).values();
}

/// Deterministic map from a slice to a fixed-length feature vector.
class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual std::string name() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual std::vector<double> extract(const Slice2D& slice) const = 0;
};

class RawPixelBackend final : public FeatureBackend {
 public:
  explicit RawPixelBackend(std::size_t side) : side_(side) {
    if (side < 2) throw Error(Errc::InvalidSide, "side must be >= 2");
  }
  std::string name() const override { return "raw"; }
  std::size_t output_dim() const override { return side_ * side_; }
  std::vector<double> extract(const Slice2D& slice) const override { return extract_raw(slice, side_); }

 private:
  std::size_t side_;
};

// ---------------------------------------------------------------------------
// Feature CSV: subject_id,label,f0..f{m-1}

inline FeatureMatrix load_precomputed(const std::filesystem::path& path) {
  const csv::Table t = csv::read(path);
  if (t.header.size() < 3 || t.header[0] != "subject_id" || t.header[1] != "label")
    throw Error(Errc::ParseError, path.string() + ": header must be subject_id,label,f0,...");
  const std::size_t m = t.header.size() - 2;
  if (t.rows.empty()) throw Error(Errc::EmptyFile, path.string() + " has no data rows");

  FeatureMatrix fm;
  fm.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string where = path.string() + ":" + std::to_string(t.line_numbers[i]);
    if (row.size() != m + 2)
      throw Error(Errc::ParseError, where + ": expected " + std::to_string(m + 2) + " fields, got " +
                                        std::to_string(row.size()));
    fm.subject_ids.push_back(row[0]);
    fm.labels.push_back(row[1]);
    for (std::size_t j = 0; j < m; ++j) {
      double v;
      if (!csv::parse_double(row[j + 2], v))
        throw Error(Errc::ParseError, where + ": non-numeric cell '" + row[j + 2] + "'");
      fm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
    }
  }
  return fm;
}

inline void save_features(const std::filesystem::path& path, const FeatureMatrix& fm) {
  fm.validate();
  auto out = csv::open_for_write(path);
  out << "subject_id,label";
  for (std::size_t j = 0; j < fm.cols(); ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < fm.rows(); ++i) {
    for (const auto* field : {&fm.subject_ids[i], &fm.labels[i]})
      if (field->find_first_of(",\n\r") != std::string::npos)
        throw Error(Errc::InvalidArgument, "identifier contains a CSV delimiter: " + *field);
    out << fm.subject_ids[i] << ',' << fm.labels[i];
    for (std::size_t j = 0; j < fm.cols(); ++j)
      out << ',' << csv::format_double(fm.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    out << '\n';
  }
  if (!out) throw Error(Errc::IoError, "write failure in " + path.string());
}

// ---------------------------------------------------------------------------
// Standard scaler (population standard deviation)

inline constexpr double kZeroStd = 1e-12;

struct ScalerParams {
  Eigen::VectorXd means;
  Eigen::VectorXd stds;
};

inline ScalerParams fit_standardize(const RowMatrix& X) {
  if (X.rows() < 1) throw Error(Errc::DegenerateInput, "scaler needs at least one row");
  ScalerParams p;
  p.means = X.colwise().mean().transpose();
  const RowMatrix centered = X.rowwise() - p.means.transpose();
  p.stds = (centered.array().square().colwise().sum() / static_cast<double>(X.rows())).sqrt().transpose();
  return p;
}

inline RowMatrix apply_standardize(const RowMatrix& X, const ScalerParams& p) {
  if (X.cols() != p.means.size()) throw Error(Errc::DimMismatch, "scaler width mismatch");
  RowMatrix out(X.rows(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (p.stds(j) < kZeroStd)
      out.col(j).setZero();
    else
      out.col(j) = (X.col(j).array() - p.means(j)) / p.stds(j);
  }
  return out;
}

inline ScalerParams fit_standardize(const FeatureMatrix& X) { return fit_standardize(X.values); }

inline FeatureMatrix apply_standardize(const FeatureMatrix& X, const ScalerParams& p) {
  return {apply_standardize(X.values, p), X.labels, X.subject_ids};
}

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  RowMatrix components;                    // d x m, orthonormal rows
  Eigen::VectorXd explained_variance;      // eigenvalues of the sample covariance
  Eigen::VectorXd explained_variance_ratio;
  Eigen::VectorXd mean;                    // m

  std::size_t dim() const noexcept { return static_cast<std::size_t>(components.rows()); }
};

/// Fits PCA by SVD of the centered data and keeps the fewest components whose
/// cumulative explained-variance ratio reaches `variance_threshold`.
inline PcaModel pca_fit(const RowMatrix& X, double variance_threshold = 0.95) {
  if (X.rows() < 2) throw Error(Errc::DegenerateInput, "PCA needs at least two rows");
  if (!(variance_threshold > 0.0 && variance_threshold <= 1.0))
    throw Error(Errc::InvalidArgument, "variance_threshold must be in (0, 1]");
  PcaModel model;
  model.mean = X.colwise().mean().transpose();
  const RowMatrix centered = X.rowwise() - model.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const Eigen::Index rank_cap = std::min<Eigen::Index>(X.rows() - 1, X.cols());
  const Eigen::VectorXd eig = s.head(rank_cap).array().square() / static_cast<double>(X.rows() - 1);
  const double total = s.array().square().sum() / static_cast<double>(X.rows() - 1);

  Eigen::Index d = rank_cap;
  if (total <= 0.0) {
    d = 1;
  } else if (variance_threshold < 1.0) {
    double cumulative = 0.0;
    for (Eigen::Index i = 0; i < rank_cap; ++i) {
      cumulative += eig(i) / total;
      if (cumulative >= variance_threshold - 1e-12) {
        d = i + 1;
        break;
      }
    }
  }

  model.components = svd.matrixV().leftCols(d).transpose();
  // Sign convention: largest-magnitude entry of each component is positive.
  for (Eigen::Index r = 0; r < d; ++r) {
    Eigen::Index arg = 0;
    model.components.row(r).cwiseAbs().maxCoeff(&arg);
    if (model.components(r, arg) < 0) model.components.row(r) *= -1.0;
  }
  model.explained_variance = eig.head(d);
  model.explained_variance_ratio =
      total > 0.0 ? Eigen::VectorXd(eig.head(d) / total) : Eigen::VectorXd::Zero(d);
  return model;
}

inline RowMatrix pca_transform(const RowMatrix& X, const PcaModel& model) {
  if (X.cols() != model.mean.size()) throw Error(Errc::DimMismatch, "PCA width mismatch");
  return (X.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline RowMatrix pca_inverse_transform(const RowMatrix& Z, const PcaModel& model) {
  if (Z.cols() != model.components.rows()) throw Error(Errc::DimMismatch, "PCA width mismatch");
  return (Z * model.components).rowwise() + model.mean.transpose();
}

inline PcaModel pca_fit(const FeatureMatrix& X, double variance_threshold = 0.95) {
  return pca_fit(X.values, variance_threshold);
}

inline FeatureMatrix pca_transform(const FeatureMatrix& X, const PcaModel& model) {
  return {pca_transform(X.values, model), X.labels, X.subject_ids};
}

// ---------------------------------------------------------------------------
// JSON export

namespace detail {

inline nlohmann::json to_json_vector(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline nlohmann::json to_json_matrix(const RowMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Eigen::VectorXd row = m.row(r).transpose();
    rows.push_back(to_json_vector(row));
  }
  return rows;
}

inline RowMatrix matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty = 0) {
  RowMatrix m(static_cast<Eigen::Index>(j.size()),
              j.empty() ? cols_if_empty : static_cast<Eigen::Index>(j.front().size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const auto row = j[static_cast<std::size_t>(r)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != m.cols())
      throw Error(Errc::ParseError, "ragged matrix in JSON");
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace detail

inline nlohmann::json to_json(const ScalerParams& p) {
  return {{"type", "standard_scaler"},
          {"std_convention", "population"},
          {"means", detail::to_json_vector(p.means)},
          {"stds", detail::to_json_vector(p.stds)}};
}

inline ScalerParams scaler_from_json(const nlohmann::json& j) {
  return {detail::vector_from_json(j.at("means")), detail::vector_from_json(j.at("stds"))};
}

inline nlohmann::json to_json(const PcaModel& m) {
  return {{"type", "pca"},
          {"mean", detail::to_json_vector(m.mean)},
          {"components", detail::to_json_matrix(m.components)},
          {"explained_variance", detail::to_json_vector(m.explained_variance)},
          {"explained_variance_ratio", detail::to_json_vector(m.explained_variance_ratio)}};
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  PcaModel m;
  m.mean = detail::vector_from_json(j.at("mean"));
  m.components = detail::matrix_from_json(j.at("components"), m.mean.size());
  m.explained_variance = detail::vector_from_json(j.at("explained_variance"));
  m.explained_variance_ratio = detail::vector_from_json(j.at("explained_variance_ratio"));
  return m;
}

}  // namespace cogdecomp
