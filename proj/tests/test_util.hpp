#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

// Test-side oracles, kept independent of the library implementations they
// check.

namespace testutil {

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Mean silhouette score over all points, exhaustive pairwise distances.
inline double silhouette(const std::vector<std::vector<double>>& points,
                         const std::vector<std::size_t>& labels) {
  const std::size_t n = points.size();
  std::size_t n_labels = 0;
  for (std::size_t l : labels) n_labels = std::max(n_labels, l + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sum_by_label(n_labels, 0.0);
    std::vector<std::size_t> count_by_label(n_labels, 0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      sum_by_label[labels[j]] += euclidean(points[i], points[j]);
      ++count_by_label[labels[j]];
    }
    const double a = count_by_label[labels[i]] > 0
                         ? sum_by_label[labels[i]] / static_cast<double>(count_by_label[labels[i]])
                         : 0.0;
    double b = 0.0;
    bool first = true;
    for (std::size_t l = 0; l < n_labels; ++l) {
      if (l == labels[i] || count_by_label[l] == 0) continue;
      const double m = sum_by_label[l] / static_cast<double>(count_by_label[l]);
      if (first || m < b) {
        b = m;
        first = false;
      }
    }
    if (!first) total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace testutil
