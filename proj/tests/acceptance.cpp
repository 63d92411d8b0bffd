// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <unistd.h>

#include "cogdecomp/pipeline.hpp"
#include "cogdecomp/synth.hpp"
#include "oracles.hpp"

using namespace cogdecomp;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cogdecomp-acceptance-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RowMatrix random_rows(Eigen::Index n, Eigen::Index m, Rng& rng) {
  RowMatrix X(n, m);
  for (auto& v : X.reshaped()) v = rng.normal();
  return X;
}

// Composition dominance is checked on every evaluation this suite performs.
std::size_t evaluations_seen = 0;
std::size_t dominance_violations = 0;

void record(const EvalReport& r) {
  ++evaluations_seen;
  if (r.mode == ComposeMode::ArgmaxStrip && r.composed.accuracy < r.subclass.accuracy) ++dominance_violations;
}

void record(const nlohmann::json& metrics) {
  for (const auto& cell : metrics.at("cells")) {
    ++evaluations_seen;
    const auto& t = cell.at("test");
    if (t.at("composed").at("metrics").at("accuracy").get<double>() <
        t.at("subclass").at("metrics").at("accuracy").get<double>())
      ++dominance_violations;
  }
}

Outcome entropy_oracle() {
  const auto t0 = Clock::now();
  Rng rng(101);
  const Offset offsets[] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}, {0, 2}};
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t rows = 1; rows <= 4; ++rows)
    for (std::size_t cols = 1; cols <= 4; ++cols)
      for (int levels : {2, 3, 8})
        for (const auto& off : offsets)
          for (bool sym : {true, false}) {
            std::vector<std::vector<int>> q(rows, std::vector<int>(cols));
            Grid<int> g(rows, cols);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < cols; ++c) g(r, c) = q[r][c] = static_cast<int>(rng.index(levels));
            const auto counts = oracle::cooccurrence(q, off.drow, off.dcol, sym);
            if (counts.empty()) continue;
            const QuantizedSlice qs{levels, g};
            const auto raw = glcm(qs, off, sym, false);
            const auto norm = glcm(qs, off, sym, true);
            double total = 0.0;
            for (const auto& [k, v] : counts) total += v;
            for (int i = 0; i < levels; ++i)
              for (int j = 0; j < levels; ++j) {
                const auto it = counts.find({i, j});
                const double expect = it == counts.end() ? 0.0 : it->second;
                worst = std::max({worst, std::abs(raw(i, j) - expect), std::abs(norm(i, j) - expect / total)});
              }
            worst = std::max(worst, std::abs(glcm_entropy(norm) - oracle::entropy_bits(counts)));
            ++cases;
          }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 1.0 && cases > 100,
          fmt("%zu slices, max abs error %.3g, %.3f s", cases, worst, secs)};
}

Outcome entropy_invariance() {
  Rng rng(202);
  std::size_t mismatches = 0;
  for (int s = 0; s < 100; ++s) {
    Grid<double> g(16, 16);
    for (auto& v : g.values()) v = s % 2 ? rng.uniform() * 1000.0 - 200.0 : std::round(rng.uniform() * 255.0);
    const double h = slice_entropy(g);
    for (double a : {0.5, 3.0})
      for (double b : {-10.0, 100.0})
        if (slice_entropy(g.map([&](double v) { return a * v + b; })) != h) ++mismatches;
  }
  return {mismatches == 0, fmt("100 slices x 4 affine maps, %zu mismatches", mismatches)};
}

Outcome kmeans_optimality() {
  const auto t0 = Clock::now();
  Rng rng(303);
  std::size_t failures = 0;
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const auto n = static_cast<Eigen::Index>(2 + rng.index(7));
    const auto m = static_cast<Eigen::Index>(1 + rng.index(3));
    const std::size_t k = 1 + rng.index(std::min<std::size_t>(3, static_cast<std::size_t>(n)));
    const RowMatrix X = random_rows(n, m, rng);
    oracle::Points pts;
    for (Eigen::Index i = 0; i < n; ++i) pts.emplace_back(X.row(i).data(), X.row(i).data() + m);
    const double gap = std::abs(kmeans_best_of(X, k, 1000 + inst, 10).wcss - oracle::brute_force_wcss(pts, k));
    worst = std::max(worst, gap);
    failures += gap > 1e-9;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 30.0, fmt("50 instances, %zu mismatches, max gap %.3g, %.2f s", failures, worst, secs)};
}

// Blob centres on the vertices of a regular simplex, pairwise `sep` apart.
RowMatrix simplex_blobs(std::size_t g, std::size_t per, double sep, Rng& rng) {
  const auto dim = static_cast<Eigen::Index>(g);
  RowMatrix X(static_cast<Eigen::Index>(g * per), dim);
  for (std::size_t c = 0; c < g; ++c)
    for (std::size_t i = 0; i < per; ++i) {
      const auto r = static_cast<Eigen::Index>(c * per + i);
      for (Eigen::Index j = 0; j < dim; ++j)
        X(r, j) = rng.normal() + (j == static_cast<Eigen::Index>(c) ? sep / std::sqrt(2.0) : 0.0);
    }
  return X;
}

Outcome elbow_recovery() {
  Rng rng(404);
  std::size_t hits = 0;
  std::string misses;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t g = 2 + static_cast<std::size_t>(trial % 3);
    const RowMatrix X = simplex_blobs(g, 25, 10.0, rng);
    const auto r = elbow_select_k(X, 1, 8, 5000 + trial);
    if (r.best_k == g) ++hits;
    else misses += fmt(" g=%zu->%zu", g, r.best_k);
  }
  return {hits >= 27, fmt("%zu/30 trials recovered g (separation 10 sigma)%s", hits, misses.c_str())};
}

Outcome pca_properties() {
  Rng rng(505);
  double ortho = 0.0, recon = 0.0;
  for (int t = 0; t < 10; ++t) {
    const auto n = static_cast<Eigen::Index>(5 + rng.index(30));
    const auto m = static_cast<Eigen::Index>(2 + rng.index(12));
    const RowMatrix X = random_rows(n, m, rng);
    const RowMatrix Z = apply_standardize(X, fit_standardize(X));
    const auto model = pca_fit(Z, 1.0);
    const RowMatrix G = model.components * model.components.transpose();
    ortho = std::max(ortho, (G - RowMatrix::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff());
    if (n > m) recon = std::max(recon, (pca_inverse_transform(pca_transform(Z, model), model) - Z).cwiseAbs().maxCoeff());
  }
  RowMatrix line(20, 3);
  for (Eigen::Index i = 0; i < 20; ++i) {
    const double t = rng.normal();
    line.row(i) << t, -2.0 * t + 1.0, 0.5 * t;
  }
  const double ratio = pca_fit(line, 0.95).explained_variance_ratio(0);
  return {ortho < 1e-8 && std::abs(ratio - 1.0) < 1e-9 && recon < 1e-6,
          fmt("orthonormality %.3g, rank-1 ratio error %.3g, reconstruction %.3g", ortho, std::abs(ratio - 1.0), recon)};
}

Outcome gradient_checks() {
  Rng rng(606);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t in = 2 + rng.index(6);
    const std::size_t hidden = t % 2 ? 3 + rng.index(6) : 0;
    std::vector<std::size_t> counts{1 + rng.index(2), 1 + rng.index(2), 1 + rng.index(2)};
    LabelCodec codec({"CN", "MCI", "AD"}, counts);
    ClassifierModel model(in, hidden, codec);
    model.initialize(700 + t);
    const auto batch = static_cast<Eigen::Index>(1 + rng.index(16));
    const RowMatrix X = random_rows(batch, static_cast<Eigen::Index>(in), rng);
    std::vector<int> y;
    for (Eigen::Index i = 0; i < batch; ++i) y.push_back(static_cast<int>(rng.index(codec.num_subclasses())));
    worst = std::max(worst, gradient_check(model, X, y));
  }
  return {worst < 1e-4, fmt("20 (model, batch) pairs, max relative error %.3g", worst)};
}

Outcome decomposition_structure() {
  Rng rng(707);
  std::size_t bad = 0, rows = 0;
  for (int t = 0; t < 20; ++t) {
    const auto n = static_cast<Eigen::Index>(12 + rng.index(60));
    FeatureMatrix fm{random_rows(n, 1 + static_cast<Eigen::Index>(rng.index(5)), rng), {}, {}};
    const std::vector<std::string> classes{"CN", "MCI", "AD"};
    for (Eigen::Index i = 0; i < n; ++i) {
      fm.labels.push_back(classes[static_cast<std::size_t>(i) % 3]);
      fm.subject_ids.push_back("s" + std::to_string(i));
    }
    DecompositionConfig cfg;
    if (t % 2) {
      cfg.mode = DecompositionConfig::Mode::Elbow;
      cfg.k_min = 1;
      cfg.k_max = 4;
    } else {
      cfg.k = 1 + rng.index(3);
    }
    const auto d = decompose(fm, cfg, 800 + t, classes);
    std::map<std::string, std::size_t> expected, got;
    for (const auto& l : fm.labels) ++expected[l];
    for (const auto& r : decomposition_report(d.codec, d.sublabels)) got[r.class_label] += r.count;
    bad += expected != got;
    for (std::size_t i = 0; i < fm.rows(); ++i, ++rows) {
      const auto [c, k] = d.codec.decode(d.sublabels[i]);
      if (compose_label(d.codec.encode(c, k), d.codec) != fm.labels[i]) ++bad;
    }
  }
  return {bad == 0, fmt("20 datasets, %zu rows, %zu violations", rows, bad)};
}

void composition_evaluations() {
  Rng rng(808);
  for (int t = 0; t < 20; ++t) {
    LabelCodec codec({"CN", "MCI", "AD"}, {2, 2, 2});
    ClassifierModel model(4, t % 2 ? 6 : 0, codec);
    model.initialize(900 + t);
    const RowMatrix X = random_rows(40, 4, rng);
    std::vector<int> y;
    for (int i = 0; i < 40; ++i) y.push_back(static_cast<int>(rng.index(6)));
    record(evaluate(model, X, y, ComposeMode::ArgmaxStrip));
  }
}

Outcome nifti_round_trip() {
  const auto dir = scratch_dir("nifti");
  Rng rng(909);
  std::size_t bad = 0, files = 0;
  for (int dt : {nifti::kUInt8, nifti::kInt16, nifti::kInt32, nifti::kFloat32, nifti::kFloat64}) {
    Volume v{"v", {7, 5, 4}, {}, 0};
    for (std::size_t i = 0; i < 140; ++i) {
      switch (dt) {
        case nifti::kUInt8: v.voxels.push_back(static_cast<double>(rng.index(256))); break;
        case nifti::kInt16: v.voxels.push_back(static_cast<double>(rng.index(65536)) - 32768.0); break;
        case nifti::kInt32: v.voxels.push_back(static_cast<double>(rng.index(1u << 31)) - 1e9); break;
        default: v.voxels.push_back(rng.normal() * 1e3);
      }
    }
    for (const char* name : {"v.nii", "v.nii.gz"}) {
      write_nifti(dir / name, v, dt);
      const Volume back = read_nifti(dir / name);
      ++files;
      if (back.dims != v.dims || back.voxels.size() != v.voxels.size()) {
        ++bad;
        continue;
      }
      for (std::size_t i = 0; i < v.voxels.size(); ++i) {
        const bool integer = dt == nifti::kUInt8 || dt == nifti::kInt16 || dt == nifti::kInt32;
        const double err = std::abs(back.voxels[i] - v.voxels[i]);
        if (integer ? err != 0.0 : err > 1e-6 * std::abs(v.voxels[i])) {
          ++bad;
          break;
        }
      }
    }
  }
  return {bad == 0, fmt("%zu files over 5 datatypes, %zu mismatched", files, bad)};
}

Outcome end_to_end(nlohmann::json& metrics_out, fs::path& run_out) {
  const auto dir = scratch_dir("e2e");
  SynthOptions synth;
  synth.subjects_per_class = 6;
  synth.nz = 30;
  const auto t0 = Clock::now();
  const auto manifest = cmd_synth(dir / "data", synth);
  const PipelineConfig cfg;  // top_k 20, k 2, lr {0.01, 0.001}, 200 epochs, batch 64
  const auto r = cmd_pipeline(load_manifest(dir / "data" / "manifest.csv", cfg.labels), cfg, dir / "out");
  const double secs = seconds_since(t0);
  record(r.metrics);
  metrics_out = r.metrics;
  run_out = r.run_dir;
  const double acc = r.metrics.at("selected").at("composed").at("metrics").at("accuracy").get<double>();
  return {acc >= 0.90 && secs < 60.0, fmt("composed test accuracy %.4f, %.2f s (synth + pipeline)", acc, secs)};
}

Outcome determinism(const nlohmann::json& first_metrics, const fs::path& first_run) {
  // Same inputs as the end-to-end run, fresh run directory.
  const auto dir = first_run.parent_path().parent_path().parent_path();
  const PipelineConfig cfg;
  const auto m = load_manifest(dir / "data" / "manifest.csv", cfg.labels);
  const auto r = cmd_pipeline(m, cfg, dir / "out");
  record(r.metrics);
  const bool same = slurp(first_run / "metrics.json") == slurp(r.run_dir / "metrics.json") &&
                    first_metrics.dump() == r.metrics.dump();
  return {same, same ? "metrics.json identical across two runs" : "metrics.json differs between runs"};
}

}  // namespace

int main() {
  set_warning_sink([](std::string_view) {});
  int failures = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  %-26s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };

  nlohmann::json metrics;
  fs::path run_dir;
  report("entropy-oracle", entropy_oracle);
  report("entropy-invariance", entropy_invariance);
  report("kmeans-optimality", kmeans_optimality);
  report("elbow-recovery", elbow_recovery);
  report("pca", pca_properties);
  report("gradient-check", gradient_checks);
  report("decomposition-structure", decomposition_structure);
  report("nifti-round-trip", nifti_round_trip);
  report("end-to-end-synthetic", [&] { return end_to_end(metrics, run_dir); });
  report("determinism", [&] {
    if (run_dir.empty()) return Outcome{false, "end-to-end run missing"};
    return determinism(metrics, run_dir);
  });
  report("composition-dominance", [&] {
    composition_evaluations();
    return Outcome{dominance_violations == 0 && evaluations_seen > 0,
                   fmt("%zu evaluations, %zu with composed < sub-class accuracy", evaluations_seen, dominance_violations)};
  });

  fs::remove_all(fs::temp_directory_path() / ("cogdecomp-acceptance-" + std::to_string(::getpid())));
  std::printf("%s\n", failures ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED");
  return failures ? 1 : 0;
}
