#pragma once

// Independent reference implementations used by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Minimum-cost perfect matching on a square cost matrix (Kuhn-Munkres
/// with potentials).
inline double assignment_cost(const std::vector<std::vector<double>>& a) {
  const int n = static_cast<int>(a.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1), v(n + 1);
  std::vector<int> p(n + 1), way(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double cost = 0.0;
  for (int j = 1; j <= n; ++j) cost += a[p[j] - 1][j - 1];
  return cost;
}

/// Exact optimal transport between uniform point clouds under squared
/// Euclidean cost: replicate both sets to lcm(n, m) points and solve the
/// assignment problem (a vertex of the transport polytope).
template <typename M>
double exact_ot(const M& x, const M& y) {
  const auto n = static_cast<int>(x.rows()), m = static_cast<int>(y.rows());
  const int l = std::lcm(n, m);
  std::vector<std::vector<double>> c(l, std::vector<double>(l));
  for (int i = 0; i < l; ++i) {
    for (int j = 0; j < l; ++j) c[i][j] = (x.row(i / (l / n)) - y.row(j / (l / m))).squaredNorm();
  }
  return assignment_cost(c) / l;
}

/// Golden-section maximization of a unimodal function on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi,
                         double tol = 1e-12) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

/// Weighted Cox log partial likelihood written directly from its product
/// form: each event contributes w_i (a_i b - log sum_{y_j >= y_i} w_j e^{a_j b}).
inline double partial_loglik(double beta, const std::vector<double>& y, const std::vector<int>& delta,
                             const std::vector<int>& a, const std::vector<double>& w) {
  double ll = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (delta[i] != 1) continue;
    double risk = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[j] >= y[i]) risk += w[j] * std::exp(a[j] * beta);
    }
    ll += w[i] * (a[i] * beta - std::log(risk));
  }
  return ll;
}

/// Harrell-style concordance by enumerating ordered pairs.
inline double brute_c_index(const std::vector<double>& pred, const std::vector<double>& y,
                            const std::vector<int>& delta) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (i == j || delta[i] != 1 || !(y[i] < y[j])) continue;
      den += 1.0;
      num += pred[i] < pred[j] ? 1.0 : (pred[i] == pred[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

/// Kaplan-Meier value just after time t from the definition.
inline double km_at(double t, const std::vector<double>& y, const std::vector<int>& delta) {
  std::vector<double> times;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (delta[i] == 1 && y[i] <= t) times.push_back(y[i]);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double s = 1.0;
  for (double u : times) {
    double d = 0.0, n = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y[i] >= u) n += 1.0;
      if (y[i] == u && delta[i] == 1) d += 1.0;
    }
    s *= 1.0 - d / n;
  }
  return s;
}

}  // namespace oracle
