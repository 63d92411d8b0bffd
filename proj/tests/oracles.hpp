#pragma once

// Independent reference implementations used to freeze expected values.
// They share no code with the library beyond plain data types.

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <utility>
#include <vector>

namespace oracle {

using Points = std::vector<std::vector<double>>;

// Minimum WCSS over every partition of the points into exactly k non-empty
// clusters, by enumerating all k^n label vectors.
inline double brute_force_wcss(const Points& pts, std::size_t k) {
  const std::size_t n = pts.size();
  const std::size_t m = pts.empty() ? 0 : pts[0].size();
  std::vector<std::size_t> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    std::vector<std::vector<double>> sum(k, std::vector<double>(m, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[label[i]];
      for (std::size_t j = 0; j < m; ++j) sum[label[i]][j] += pts[i][j];
    }
    bool all_used = true;
    for (auto c : count) all_used = all_used && c > 0;
    if (all_used) {
      double w = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          const double d = pts[i][j] - sum[label[i]][j] / static_cast<double>(count[label[i]]);
          w += d * d;
        }
      if (w < best) best = w;
    }
    std::size_t pos = 0;
    while (pos < n && ++label[pos] == k) label[pos++] = 0;
    if (pos == n) break;
  }
  return best;
}

// Co-occurrence counts by direct enumeration of every pixel pair.
inline std::map<std::pair<int, int>, double> cooccurrence(const std::vector<std::vector<int>>& q, int dr, int dc,
                                                          bool symmetric) {
  std::map<std::pair<int, int>, double> counts;
  const int rows = static_cast<int>(q.size());
  const int cols = rows ? static_cast<int>(q[0].size()) : 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int r2 = r + dr, c2 = c + dc;
      if (r2 < 0 || r2 >= rows || c2 < 0 || c2 >= cols) continue;
      counts[{q[r][c], q[r2][c2]}] += 1.0;
      if (symmetric) counts[{q[r2][c2], q[r][c]}] += 1.0;
    }
  return counts;
}

// Shannon entropy in bits of the normalized counts.
inline double entropy_bits(const std::map<std::pair<int, int>, double>& counts) {
  double total = 0.0;
  for (const auto& [key, v] : counts) total += v;
  double h = 0.0;
  for (const auto& [key, v] : counts)
    if (v > 0) h -= (v / total) * std::log2(v / total);
  return h;
}

// Central finite-difference derivative of f at x along coordinate i.
template <class F>
double central_difference(F&& f, std::vector<double> x, std::size_t i, double step) {
  x[i] += step;
  const double up = f(x);
  x[i] -= 2 * step;
  const double down = f(x);
  return (up - down) / (2 * step);
}

}  // namespace oracle
