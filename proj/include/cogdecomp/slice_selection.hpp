#pragma once

// GLCM texture entropy and informative-slice ranking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cogdecomp/error.hpp"
#include "cogdecomp/parallel.hpp"
#include "cogdecomp/volume_io.hpp"

namespace cogdecomp {

struct Offset {
  int drow = 0;
  int dcol = 1;
  friend bool operator==(const Offset&, const Offset&) = default;
};

/// L x L grey-level co-occurrence table, row-major.
struct GlcmMatrix {
  int levels = 0;
  std::vector<double> cells;

  double operator()(int i, int j) const { return cells[static_cast<std::size_t>(i) * levels + j]; }
  double total() const {
    double s = 0.0;
    for (double v : cells) s += v;
    return s;
  }
};

/// Counts (q[p], q[p + offset]) pairs for every p whose partner lies inside
/// the slice. Symmetric mode adds the transpose; normalize divides by the sum.
inline GlcmMatrix glcm(const QuantizedSlice& q, Offset offset, bool symmetric = true,
                       bool normalize = true) {
  if (offset.drow == 0 && offset.dcol == 0) throw Error(Errc::ZeroOffset, "offset (0,0)");
  if (q.levels < 2) throw Error(Errc::InvalidLevels, "levels = " + std::to_string(q.levels));
  const auto L = static_cast<std::size_t>(q.levels);
  GlcmMatrix g{q.levels, std::vector<double>(L * L, 0.0)};

  const auto rows = static_cast<long>(q.indices.rows());
  const auto cols = static_cast<long>(q.indices.cols());
  const long r0 = std::max(0L, -static_cast<long>(offset.drow));
  const long r1 = std::min(rows, rows - offset.drow);
  const long c0 = std::max(0L, -static_cast<long>(offset.dcol));
  const long c1 = std::min(cols, cols - offset.dcol);

  std::size_t pairs = 0;
  for (long r = r0; r < r1; ++r) {
    for (long c = c0; c < c1; ++c) {
      const auto i = static_cast<std::size_t>(q.indices(r, c));
      const auto j = static_cast<std::size_t>(q.indices(r + offset.drow, c + offset.dcol));
      g.cells[i * L + j] += 1.0;
      ++pairs;
    }
  }
  if (pairs == 0) throw Error(Errc::EmptyGlcm, "no in-bounds pixel pairs for offset");

  if (symmetric) {
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t j = i; j < L; ++j) {
        const double s = g.cells[i * L + j] + g.cells[j * L + i];
        g.cells[i * L + j] = s;
        g.cells[j * L + i] = s;
      }
    }
  }
  if (normalize) {
    const double total = static_cast<double>(pairs) * (symmetric ? 2.0 : 1.0);
    for (auto& v : g.cells) v /= total;
  }
  return g;
}

/// Shannon entropy in bits of a normalized GLCM, with 0 log 0 = 0.
inline double glcm_entropy(const GlcmMatrix& g) {
  const double sum = g.total();
  if (std::abs(sum - 1.0) > 1e-6)
    throw Error(Errc::NotNormalized, "GLCM sums to " + std::to_string(sum));
  double h = 0.0;
  for (double p : g.cells)
    if (p > 0.0) h -= p * std::log2(p);
  return h;
}

struct SliceEntropyConfig {
  int levels = 8;
  Offset offset{0, 1};
  bool symmetric = true;
};

/// quantize -> glcm -> entropy. Slices too small for the offset score 0.
inline double slice_entropy(const Grid<double>& pixels, const SliceEntropyConfig& cfg = {}) {
  const QuantizedSlice q = quantize(pixels, cfg.levels);
  try {
    return glcm_entropy(glcm(q, cfg.offset, cfg.symmetric, true));
  } catch (const Error& e) {
    if (e.code() != Errc::EmptyGlcm) throw;
    warn("slice has no co-occurring pixel pairs for the configured offset; entropy set to 0");
    return 0.0;
  }
}

inline double slice_entropy(const Slice2D& s, const SliceEntropyConfig& cfg = {}) {
  return slice_entropy(s.pixels, cfg);
}

struct RankedSlice {
  std::string subject_id;
  std::size_t slice_index = 0;
  double entropy = 0.0;
  friend bool operator==(const RankedSlice&, const RankedSlice&) = default;
};

/// Sorts by descending entropy; ties by ascending slice index.
inline void sort_by_entropy(std::vector<RankedSlice>& ranked) {
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedSlice& a, const RankedSlice& b) {
    if (a.entropy != b.entropy) return a.entropy > b.entropy;
    return a.slice_index < b.slice_index;
  });
}

inline std::vector<RankedSlice> rank_slices(std::span<const Slice2D> slices,
                                            const SliceEntropyConfig& cfg = {},
                                            std::size_t threads = 1) {
  if (slices.empty()) throw Error(Errc::EmptyInput, "no slices to rank");
  for (const auto& s : slices)
    if (s.subject_id != slices.front().subject_id)
      throw Error(Errc::InvalidArgument, "rank_slices expects slices of a single subject");
  std::vector<RankedSlice> ranked(slices.size());
  parallel_for(slices.size(), threads, [&](std::size_t i) {
    ranked[i] = {slices[i].subject_id, slices[i].slice_index, slice_entropy(slices[i], cfg)};
  });
  sort_by_entropy(ranked);
  return ranked;
}

inline constexpr std::size_t kDefaultTopK = 20;

/// Prefix of a ranked list; never reorders.
inline std::vector<RankedSlice> select_top_k(std::span<const RankedSlice> ranked,
                                             std::size_t k = kDefaultTopK) {
  if (k < 1) throw Error(Errc::InvalidK, "k must be >= 1");
  const auto n = std::min(k, ranked.size());
  return {ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace cogdecomp
