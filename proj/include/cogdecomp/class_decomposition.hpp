#pragma once

// Clustering-based class decomposition: per-class k-means, elbow selection of
// k, and the (class, cluster) <-> sub-class id codec.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cogdecomp/error.hpp"
#include "cogdecomp/feature_pipeline.hpp"
#include "cogdecomp/parallel.hpp"
#include "cogdecomp/random.hpp"

namespace cogdecomp {

struct KMeansResult {
  RowMatrix centroids;            // k x m
  std::vector<int> assignments;   // n, values in [0, k)
  double wcss = 0.0;
  int iterations = 0;
  std::vector<double> wcss_history;  // after each Lloyd iteration or transfer sweep
};

/// Sum of squared distances of each row to the centroid it is assigned to.
inline double compute_wcss(const RowMatrix& X, const RowMatrix& centroids,
                           std::span<const int> assignments) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    total += (X.row(i) - centroids.row(assignments[static_cast<std::size_t>(i)])).squaredNorm();
  return total;
}

namespace detail {

inline RowMatrix kmeanspp_init(const RowMatrix& X, std::size_t k, Rng& rng) {
  const auto n = static_cast<std::size_t>(X.rows());
  RowMatrix centers(static_cast<Eigen::Index>(k), X.cols());
  centers.row(0) = X.row(static_cast<Eigen::Index>(rng.index(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (X.row(static_cast<Eigen::Index>(i)) - centers.row(0)).squaredNorm();

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n - 1;
    if (total <= 0.0) {
      pick = rng.index(n);
    } else {
      const double target = rng.uniform() * total;
      double cumulative = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cumulative += d2[i];
        if (cumulative > target) {
          pick = i;
          break;
        }
      }
      // Rounding can leave target >= cumulative; fall back to the last point
      // with positive weight.
      while (d2[pick] <= 0.0 && pick > 0) --pick;
    }
    centers.row(static_cast<Eigen::Index>(c)) = X.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (X.row(static_cast<Eigen::Index>(i)) - centers.row(static_cast<Eigen::Index>(c))).squaredNorm());
  }
  return centers;
}


/// One sweep of single-point moves: x leaves cluster a for b when
/// n_b/(n_b+1)*|x-c_b|^2 < n_a/(n_a-1)*|x-c_a|^2, which strictly lowers the
/// WCSS. Centroids must be the means of the current assignments.
inline bool transfer_pass(const RowMatrix& X, KMeansResult& res) {
  const auto K = res.centroids.rows();
  std::vector<double> counts(static_cast<std::size_t>(K), 0.0);
  for (int a : res.assignments) counts[static_cast<std::size_t>(a)] += 1.0;
  bool moved = false;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto a = static_cast<std::size_t>(res.assignments[static_cast<std::size_t>(i)]);
    if (counts[a] < 2.0) continue;
    const auto x = X.row(i);
    const double remove = counts[a] / (counts[a] - 1.0) * (x - res.centroids.row(static_cast<Eigen::Index>(a))).squaredNorm();
    double best = remove * (1.0 - 1e-12);
    Eigen::Index target = -1;
    for (Eigen::Index b = 0; b < K; ++b) {
      if (static_cast<std::size_t>(b) == a) continue;
      const double nb = counts[static_cast<std::size_t>(b)];
      const double add = nb / (nb + 1.0) * (x - res.centroids.row(b)).squaredNorm();
      if (add < best) {
        best = add;
        target = b;
      }
    }
    if (target < 0) continue;
    const auto ai = static_cast<Eigen::Index>(a);
    double& na = counts[a];
    double& nb = counts[static_cast<std::size_t>(target)];
    res.centroids.row(ai) = (na * res.centroids.row(ai) - x) / (na - 1.0);
    res.centroids.row(target) = (nb * res.centroids.row(target) + x) / (nb + 1.0);
    na -= 1.0;
    nb += 1.0;
    res.assignments[static_cast<std::size_t>(i)] = static_cast<int>(target);
    moved = true;
  }
  if (moved) {
    // Recompute exactly to shed incremental rounding.
    RowMatrix means = RowMatrix::Zero(K, X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) means.row(res.assignments[static_cast<std::size_t>(i)]) += X.row(i);
    for (Eigen::Index c = 0; c < K; ++c) means.row(c) /= counts[static_cast<std::size_t>(c)];
    res.centroids = std::move(means);
    res.wcss = compute_wcss(X, res.centroids, res.assignments);
    res.wcss_history.push_back(res.wcss);
  }
  return moved;
}

}  // namespace detail

/// Lloyd's k-means with seeded k-means++ initialization. Stops when the
/// largest centroid shift is <= tol or after max_iter iterations. Empty
/// clusters take the point farthest from its current centroid.
inline KMeansResult kmeans(const RowMatrix& X, std::size_t k, std::uint64_t seed,
                           std::size_t max_iter = 300, double tol = 1e-10) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (k < 1 || k > n)
    throw Error(Errc::InvalidK, "k = " + std::to_string(k) + " with n = " + std::to_string(n));
  if (!X.allFinite()) throw Error(Errc::InvalidData, "non-finite input to kmeans");
  if (max_iter < 1) throw Error(Errc::InvalidArgument, "max_iter must be >= 1");

  Rng rng(seed);
  KMeansResult res;
  res.centroids = detail::kmeanspp_init(X, k, rng);
  res.assignments.assign(n, 0);
  const auto K = static_cast<Eigen::Index>(k);

  std::vector<std::size_t> counts(k);
  std::size_t iter = 0;
  auto lloyd = [&] {
    while (iter < max_iter) {
      ++iter;
      // Assignment step (ties go to the lower cluster index).
      for (std::size_t i = 0; i < n; ++i) {
        const auto row = X.row(static_cast<Eigen::Index>(i));
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < K; ++c) {
          const double d = (row - res.centroids.row(c)).squaredNorm();
          if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
          }
        }
        res.assignments[i] = best;
      }

      std::fill(counts.begin(), counts.end(), 0);
      for (int a : res.assignments) ++counts[static_cast<std::size_t>(a)];
      for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0) continue;
        std::size_t far = n;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const auto a = static_cast<std::size_t>(res.assignments[i]);
          if (counts[a] < 2) continue;
          const double d = (X.row(static_cast<Eigen::Index>(i)) - res.centroids.row(static_cast<Eigen::Index>(a))).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        --counts[static_cast<std::size_t>(res.assignments[far])];
        res.assignments[far] = static_cast<int>(c);
        counts[c] = 1;
        res.centroids.row(static_cast<Eigen::Index>(c)) = X.row(static_cast<Eigen::Index>(far));
      }

      // Update step.
      RowMatrix updated = RowMatrix::Zero(K, X.cols());
      for (std::size_t i = 0; i < n; ++i) updated.row(res.assignments[i]) += X.row(static_cast<Eigen::Index>(i));
      for (Eigen::Index c = 0; c < K; ++c) updated.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);

      double shift = 0.0;
      for (Eigen::Index c = 0; c < K; ++c)
        shift = std::max(shift, (updated.row(c) - res.centroids.row(c)).norm());
      res.centroids = std::move(updated);
      res.iterations = static_cast<int>(iter);
      res.wcss = compute_wcss(X, res.centroids, res.assignments);
      res.wcss_history.push_back(res.wcss);
      if (shift <= tol) break;
    }
  };

  // Lloyd stops at any fixed point; single-point transfers that lower the
  // WCSS escape most poor ones, then Lloyd resumes from the improved state.
  lloyd();
  while (iter < max_iter && detail::transfer_pass(X, res)) lloyd();
  return res;
}

/// Best (lowest WCSS) of `n_init` seeded runs; ties keep the earliest run.
inline KMeansResult kmeans_best_of(const RowMatrix& X, std::size_t k, std::uint64_t seed,
                                   std::size_t n_init = 10, std::size_t max_iter = 300,
                                   double tol = 1e-10) {
  if (n_init < 1) throw Error(Errc::InvalidArgument, "n_init must be >= 1");
  KMeansResult best;
  for (std::size_t r = 0; r < n_init; ++r) {
    auto res = kmeans(X, k, derive_seed(seed, "kmeans-restart", r), max_iter, tol);
    if (r == 0 || res.wcss < best.wcss) best = std::move(res);
  }
  return best;
}

// ---------------------------------------------------------------------------
// Elbow selection

struct ElbowResult {
  std::size_t best_k = 0;
  std::vector<std::size_t> ks;
  std::vector<double> wcss;
};

/// Interior k with the largest second difference of the WCSS curve; ties
/// resolve to the smaller k.
inline std::size_t elbow_from_curve(std::span<const std::size_t> ks, std::span<const double> wcss) {
  if (ks.size() != wcss.size()) throw Error(Errc::DimMismatch, "ks/wcss length mismatch");
  if (ks.size() < 3) throw Error(Errc::RangeTooShort, "elbow needs at least three k values");
  std::size_t best = 1;
  double best_d2 = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < ks.size(); ++i) {
    const double d2 = wcss[i - 1] - 2.0 * wcss[i] + wcss[i + 1];
    if (d2 > best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return ks[best];
}

inline ElbowResult elbow_select_k(const RowMatrix& X, std::size_t k_min, std::size_t k_max,
                                  std::uint64_t seed, std::size_t n_init = 10,
                                  std::size_t max_iter = 300, double tol = 1e-10) {
  const auto n = static_cast<std::size_t>(X.rows());
  if (k_max < k_min || k_max - k_min + 1 < 3)
    throw Error(Errc::RangeTooShort, "k range [" + std::to_string(k_min) + ", " +
                                         std::to_string(k_max) + "] has fewer than 3 values");
  if (k_min < 1 || k_max > n)
    throw Error(Errc::InvalidK, "k range must lie within [1, " + std::to_string(n) + "]");
  ElbowResult res;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    res.ks.push_back(k);
    res.wcss.push_back(kmeans_best_of(X, k, derive_seed(seed, "elbow", k), n_init, max_iter, tol).wcss);
  }
  res.best_k = elbow_from_curve(res.ks, res.wcss);
  return res;
}

// ---------------------------------------------------------------------------
// Label codec

/// Bijection between (class index, cluster index) pairs and dense sub-class
/// ids. Sub-class ids are laid out class by class in class order.
class LabelCodec {
 public:
  LabelCodec() = default;
  LabelCodec(std::vector<std::string> classes, std::vector<std::size_t> cluster_counts)
      : classes_(std::move(classes)), counts_(std::move(cluster_counts)) {
    if (classes_.size() != counts_.size())
      throw Error(Errc::DimMismatch, "one cluster count per class required");
    std::size_t offset = 0;
    for (std::size_t c = 0; c < classes_.size(); ++c) {
      if (counts_[c] < 1) throw Error(Errc::InvalidK, "class " + classes_[c] + " has no clusters");
      if (!class_lookup_.emplace(classes_[c], c).second)
        throw Error(Errc::InvalidArgument, "duplicate class label " + classes_[c]);
      offsets_.push_back(offset);
      for (std::size_t k = 0; k < counts_[c]; ++k) {
        owner_.emplace_back(c, k);
        names_.push_back(classes_[c] + "_" + std::to_string(k + 1));
      }
      offset += counts_[c];
    }
    for (std::size_t id = 0; id < names_.size(); ++id)
      if (!name_lookup_.emplace(names_[id], static_cast<int>(id)).second)
        throw Error(Errc::InvalidArgument, "ambiguous sub-class name " + names_[id]);
  }

  std::size_t num_classes() const noexcept { return classes_.size(); }
  std::size_t num_subclasses() const noexcept { return owner_.size(); }
  const std::vector<std::string>& classes() const noexcept { return classes_; }
  const std::vector<std::size_t>& cluster_counts() const noexcept { return counts_; }

  int encode(std::size_t class_index, std::size_t cluster) const {
    if (class_index >= classes_.size() || cluster >= counts_[class_index])
      throw Error(Errc::UnknownSublabel, "no sub-class (" + std::to_string(class_index) + ", " +
                                             std::to_string(cluster) + ")");
    return static_cast<int>(offsets_[class_index] + cluster);
  }

  std::pair<std::size_t, std::size_t> decode(int id) const {
    check(id);
    return owner_[static_cast<std::size_t>(id)];
  }

  std::size_t class_of(int id) const { return decode(id).first; }

  const std::string& class_label(std::size_t class_index) const { return classes_.at(class_index); }

  std::optional<std::size_t> class_index(std::string_view label) const {
    auto it = class_lookup_.find(std::string(label));
    if (it == class_lookup_.end()) return std::nullopt;
    return it->second;
  }

  /// Report name, e.g. "AD_1" for the first cluster of class AD.
  const std::string& subclass_name(int id) const {
    check(id);
    return names_[static_cast<std::size_t>(id)];
  }

  int subclass_id(std::string_view name) const {
    auto it = name_lookup_.find(std::string(name));
    if (it == name_lookup_.end()) throw Error(Errc::UnknownSublabel, "unknown sub-class " + std::string(name));
    return it->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t c = 0; c < classes_.size(); ++c) j.push_back({{"class", classes_[c]}, {"clusters", counts_[c]}});
    return j;
  }

  static LabelCodec from_json(const nlohmann::json& j) {
    std::vector<std::string> classes;
    std::vector<std::size_t> counts;
    for (const auto& e : j) {
      classes.push_back(e.at("class").get<std::string>());
      counts.push_back(e.at("clusters").get<std::size_t>());
    }
    return {std::move(classes), std::move(counts)};
  }

  friend bool operator==(const LabelCodec& a, const LabelCodec& b) {
    return a.classes_ == b.classes_ && a.counts_ == b.counts_;
  }

 private:
  void check(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= owner_.size())
      throw Error(Errc::UnknownSublabel, "sub-class id " + std::to_string(id));
  }

  std::vector<std::string> classes_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> offsets_;
  std::vector<std::pair<std::size_t, std::size_t>> owner_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> class_lookup_;
  std::map<std::string, int> name_lookup_;
};

/// Strips the cluster component of a sub-class.
inline const std::string& compose_label(int sublabel, const LabelCodec& codec) {
  return codec.class_label(codec.class_of(sublabel));
}

// ---------------------------------------------------------------------------
// Decomposition

struct DecompositionConfig {
  enum class Mode { Fixed, Elbow };
  Mode mode = Mode::Fixed;
  std::size_t k = 2;
  std::size_t k_min = 1;
  std::size_t k_max = 6;
  std::size_t n_init = 10;
  std::size_t max_iter = 300;
  double tol = 1e-10;
};

struct DecomposedDataset {
  FeatureMatrix features;
  std::vector<int> sublabels;
  LabelCodec codec;
  std::vector<RowMatrix> centroids;         // per class, clusters x m
  std::vector<ElbowResult> elbow;           // per class; empty in fixed mode
};

/// Class labels in order of first appearance.
inline std::vector<std::string> classes_in_order(std::span<const std::string> labels) {
  std::vector<std::string> out;
  for (const auto& l : labels)
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  return out;
}

/// Clusters each class independently and relabels every row with its
/// (class, cluster) sub-class. Rows keep their order and values.
/// `class_order` fixes the codec's class order; empty means first appearance.
inline DecomposedDataset decompose(const FeatureMatrix& X, const DecompositionConfig& cfg,
                                   std::uint64_t seed, std::vector<std::string> class_order = {},
                                   std::size_t threads = 1) {
  X.validate();
  if (class_order.empty()) class_order = classes_in_order(X.labels);

  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < class_order.size(); ++c) index.emplace(class_order[c], c);
  std::vector<std::vector<std::size_t>> members(class_order.size());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto it = index.find(X.labels[i]);
    if (it == index.end()) throw Error(Errc::InvalidArgument, "row " + std::to_string(i) + " has unknown class " + X.labels[i]);
    members[it->second].push_back(i);
  }

  const std::size_t needed = cfg.mode == DecompositionConfig::Mode::Fixed ? cfg.k : 3;
  if (needed < 1) throw Error(Errc::InvalidK, "k must be >= 1");
  for (std::size_t c = 0; c < class_order.size(); ++c)
    if (members[c].size() < needed)
      throw Error(Errc::ClassTooSmall, "class " + class_order[c] + " has " + std::to_string(members[c].size()) +
                                           " rows, needs at least " + std::to_string(needed));

  std::vector<KMeansResult> results(class_order.size());
  std::vector<ElbowResult> elbows(cfg.mode == DecompositionConfig::Mode::Elbow ? class_order.size() : 0);
  parallel_for(class_order.size(), threads, [&](std::size_t c) {
    RowMatrix rows(static_cast<Eigen::Index>(members[c].size()), X.values.cols());
    for (std::size_t i = 0; i < members[c].size(); ++i)
      rows.row(static_cast<Eigen::Index>(i)) = X.values.row(static_cast<Eigen::Index>(members[c][i]));
    const auto class_seed = derive_seed(seed, "decompose", c);
    std::size_t k = cfg.k;
    if (cfg.mode == DecompositionConfig::Mode::Elbow) {
      const std::size_t hi = std::min(cfg.k_max, members[c].size());
      elbows[c] = elbow_select_k(rows, cfg.k_min, hi, class_seed, cfg.n_init, cfg.max_iter, cfg.tol);
      k = elbows[c].best_k;
    }
    results[c] = kmeans_best_of(rows, k, class_seed, cfg.n_init, cfg.max_iter, cfg.tol);
  });

  std::vector<std::size_t> counts;
  for (const auto& r : results) counts.push_back(static_cast<std::size_t>(r.centroids.rows()));
  DecomposedDataset out{X, std::vector<int>(X.rows(), -1), LabelCodec(class_order, counts), {}, std::move(elbows)};
  for (std::size_t c = 0; c < class_order.size(); ++c) {
    for (std::size_t i = 0; i < members[c].size(); ++i)
      out.sublabels[members[c][i]] =
          out.codec.encode(c, static_cast<std::size_t>(results[c].assignments[i]));
    out.centroids.push_back(std::move(results[c].centroids));
  }
  return out;
}

/// Sub-class for rows not seen during decomposition: nearest centroid among
/// the clusters of the row's own class.
inline std::vector<int> assign_sublabels(const FeatureMatrix& X, const LabelCodec& codec,
                                         std::span<const RowMatrix> centroids) {
  std::vector<int> out(X.rows());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    const auto c = codec.class_index(X.labels[i]);
    if (!c) throw Error(Errc::InvalidArgument, "row " + std::to_string(i) + " has unknown class " + X.labels[i]);
    const RowMatrix& cents = centroids[*c];
    if (cents.cols() != X.values.cols()) throw Error(Errc::DimMismatch, "centroid width mismatch");
    Eigen::Index best = 0;
    (cents.rowwise() - X.values.row(static_cast<Eigen::Index>(i))).rowwise().squaredNorm().minCoeff(&best);
    out[i] = codec.encode(*c, static_cast<std::size_t>(best));
  }
  return out;
}

struct DecompositionCount {
  std::string class_label;
  std::string subclass_name;
  std::size_t count = 0;
};

/// Per-sub-class row counts in codec order.
inline std::vector<DecompositionCount> decomposition_report(const LabelCodec& codec,
                                                            std::span<const int> sublabels) {
  std::vector<std::size_t> counts(codec.num_subclasses(), 0);
  for (int s : sublabels) {
    codec.decode(s);
    ++counts[static_cast<std::size_t>(s)];
  }
  std::vector<DecompositionCount> out;
  for (std::size_t id = 0; id < counts.size(); ++id) {
    const int sid = static_cast<int>(id);
    out.push_back({compose_label(sid, codec), codec.subclass_name(sid), counts[id]});
  }
  return out;
}

inline void write_decomposition_report(const std::filesystem::path& path,
                                       std::span<const DecompositionCount> report) {
  auto out = csv::open_for_write(path);
  out << "class,subclass_name,count\n";
  for (const auto& r : report) out << r.class_label << ',' << r.subclass_name << ',' << r.count << '\n';
  if (!out) throw Error(Errc::IoError, "write failure in " + path.string());
}

/// Feature CSV with the label column replaced by the sub-class name.
inline void save_sublabeled(const std::filesystem::path& path, const FeatureMatrix& X,
                            std::span<const int> sublabels, const LabelCodec& codec) {
  FeatureMatrix copy{X.values, {}, X.subject_ids};
  for (int s : sublabels) copy.labels.push_back(codec.subclass_name(s));
  save_features(path, copy);
}

/// Reads a sub-labeled CSV back into class labels + sub-class ids.
inline std::pair<FeatureMatrix, std::vector<int>> load_sublabeled(const std::filesystem::path& path,
                                                                  const LabelCodec& codec) {
  FeatureMatrix fm = load_precomputed(path);
  std::vector<int> sub;
  for (auto& label : fm.labels) {
    sub.push_back(codec.subclass_id(label));
    label = compose_label(sub.back(), codec);
  }
  return {std::move(fm), std::move(sub)};
}

inline nlohmann::json to_json(const DecomposedDataset& d) {
  nlohmann::json cents = nlohmann::json::array();
  for (const auto& c : d.centroids) cents.push_back(detail::to_json_matrix(c));
  nlohmann::json j{{"codec", d.codec.to_json()}, {"centroids", cents}};
  if (!d.elbow.empty()) {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& r : d.elbow) e.push_back({{"ks", r.ks}, {"wcss", r.wcss}, {"best_k", r.best_k}});
    j["elbow"] = e;
  }
  return j;
}

}  // namespace cogdecomp
