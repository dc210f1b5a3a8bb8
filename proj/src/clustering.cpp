#include <limits>
#include <vector>

#include "csa/io.h"
#include "csa/metrics.h"

namespace csa {

Clustering stratify_hr_traces(const RowMatrix& traces, std::size_t k) {
  const auto n = static_cast<std::size_t>(traces.rows());
  if (k == 0) throw Error("stratify_hr_traces: k must be at least 1");
  if (k > n) throw Error("stratify_hr_traces: k exceeds the number of subjects");
  if (!traces.allFinite()) throw Error("stratify_hr_traces: traces must be finite");

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = (traces.row(static_cast<Eigen::Index>(i)) - traces.row(static_cast<Eigen::Index>(j))).norm();
      dist[i * n + j] = dist[j * n + i] = d;
    }
  }
  std::vector<std::size_t> owner(n), size(n, 1);
  std::vector<bool> active(n, true);
  for (std::size_t i = 0; i < n; ++i) owner[i] = i;

  for (std::size_t clusters = n; clusters > k; --clusters) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (active[j] && dist[i * n + j] < best) {
          best = dist[i * n + j];
          bi = i;
          bj = j;
        }
      }
    }
    // Merge bj into bi; average linkage update.
    const double wi = static_cast<double>(size[bi]), wj = static_cast<double>(size[bj]);
    for (std::size_t m = 0; m < n; ++m) {
      if (!active[m] || m == bi || m == bj) continue;
      const double d = (wi * dist[bi * n + m] + wj * dist[bj * n + m]) / (wi + wj);
      dist[bi * n + m] = dist[m * n + bi] = d;
    }
    size[bi] += size[bj];
    active[bj] = false;
    for (std::size_t m = 0; m < n; ++m) {
      if (owner[m] == bj) owner[m] = bi;
    }
  }

  Clustering out;
  out.labels.assign(n, -1);
  std::vector<int> label_of(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    int& l = label_of[owner[i]];
    if (l < 0) l = next++;
    out.labels[i] = l;
  }
  out.mean_traces = RowMatrix::Zero(static_cast<Eigen::Index>(k), traces.cols());
  out.sizes.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = static_cast<std::size_t>(out.labels[i]);
    out.mean_traces.row(static_cast<Eigen::Index>(l)) += traces.row(static_cast<Eigen::Index>(i));
    ++out.sizes[l];
  }
  for (std::size_t l = 0; l < k; ++l) {
    out.mean_traces.row(static_cast<Eigen::Index>(l)) /= static_cast<double>(out.sizes[l]);
  }
  return out;
}

}  // namespace csa
