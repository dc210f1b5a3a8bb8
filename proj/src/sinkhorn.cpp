#include "csa/sinkhorn.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace csa {

void IpmConfig::validate() const {
  if (!(epsilon > 0.0)) throw Error("IpmConfig: epsilon must be positive");
  if (max_iterations < 1) throw Error("IpmConfig: max_iterations must be >= 1");
  if (!(tolerance > 0.0)) throw Error("IpmConfig: tolerance must be positive");
}

Json IpmConfig::to_json() const {
  return {{"epsilon", epsilon},
          {"relative", relative},
          {"max_iterations", max_iterations},
          {"tolerance", tolerance}};
}

IpmConfig IpmConfig::from_json(const Json& j) {
  IpmConfig c;
  c.epsilon = j.value("epsilon", c.epsilon);
  c.relative = j.value("relative", c.relative);
  c.max_iterations = j.value("max_iterations", c.max_iterations);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.validate();
  return c;
}

RowMatrix squared_distances(const RowMatrix& x, const RowMatrix& y) {
  RowMatrix c(x.rows(), y.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
    }
  }
  return c;
}

namespace {

constexpr double kAnnealFactor = 0.9;

// out_i = -eps * log sum_j w * exp((pot_j - C_ij) / eps), row-wise.
void softmin_rows(const RowMatrix& cost, const Eigen::VectorXd& pot, double log_w,
                  double eps, Eigen::VectorXd& out) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) mx = std::max(mx, (pot[j] - cost(i, j)) / eps);
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) s += std::exp((pot[j] - cost(i, j)) / eps - mx);
    out[i] = -eps * (mx + std::log(s) + log_w);
  }
}

void softmin_cols(const RowMatrix& cost, const Eigen::VectorXd& pot, double log_w,
                  double eps, Eigen::VectorXd& out) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  Eigen::VectorXd mx = Eigen::VectorXd::Constant(m, -std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) mx[j] = std::max(mx[j], (pot[i] - cost(i, j)) / eps);
  }
  Eigen::VectorXd s = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) s[j] += std::exp((pot[i] - cost(i, j)) / eps - mx[j]);
  }
  for (Eigen::Index j = 0; j < m; ++j) out[j] = -eps * (mx[j] + std::log(s[j]) + log_w);
}

// L1 distance between the row sums of the plan implied by (f, g) and 1/n.
double row_violation(const RowMatrix& cost, const Eigen::VectorXd& f,
                     const Eigen::VectorXd& g, double eps) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  const double log_ab = -std::log(static_cast<double>(n)) - std::log(static_cast<double>(m));
  double err = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) s += std::exp((f[i] + g[j] - cost(i, j)) / eps + log_ab);
    err += std::abs(s - 1.0 / static_cast<double>(n));
  }
  return err;
}

void finish_solution(const RowMatrix& cost, const Eigen::VectorXd& f,
                     const Eigen::VectorXd& g, double epsilon, EntropicSolution& sol) {
  const Eigen::Index n = cost.rows(), m = cost.cols();
  const double log_ab = -std::log(static_cast<double>(n)) - std::log(static_cast<double>(m));
  RowMatrix& p = sol.plan;
  p.resize(n, m);
  double pc = 0.0, kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double log_ratio = (f[i] + g[j] - cost(i, j)) / epsilon;
      const double pij = std::exp(log_ratio + log_ab);
      p(i, j) = pij;
      pc += pij * cost(i, j);
      kl += pij * log_ratio;
    }
  }
  sol.marginal_error = (p.rowwise().sum().array() - 1.0 / static_cast<double>(n)).abs().sum();
  sol.kl = kl;
  // Dual objective; the column marginals are exact after the last update, so
  // it agrees with <P,C> + eps KL at convergence and is less sensitive to an
  // early stop.
  sol.value = f.mean() + g.mean();
  sol.primal_value = pc + epsilon * kl;
}

void check_problem(const RowMatrix& cost, double epsilon) {
  if (cost.rows() == 0 || cost.cols() == 0) throw Error("entropic OT: empty cost matrix");
  if (!(epsilon > 0.0)) throw Error("entropic OT: epsilon must be positive");
}

}  // namespace

EntropicSolution solve_entropic_ot(const RowMatrix& cost, double epsilon,
                                   int max_iterations, double tolerance) {
  check_problem(cost, epsilon);
  // Plain alternating updates stall when the two clouds coincide; that case
  // has its own solver.
  if (cost.rows() == cost.cols() && (cost.array() == cost.transpose().array()).all()) {
    return solve_symmetric_ot(cost, epsilon, max_iterations, tolerance);
  }
  const double log_a = -std::log(static_cast<double>(cost.rows()));
  const double log_b = -std::log(static_cast<double>(cost.cols()));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(cost.rows()), g = Eigen::VectorXd::Zero(cost.cols());
  EntropicSolution sol;

  // Anneal from the cost diameter down to the target, one sweep per stage;
  // the last iteration is always at the target.
  double eps = std::max(cost.maxCoeff(), epsilon);
  while (eps > epsilon && sol.iterations + 1 < max_iterations) {
    softmin_rows(cost, g, log_b, eps, f);
    softmin_cols(cost, f, log_a, eps, g);
    ++sol.iterations;
    eps = std::max(eps * kAnnealFactor, epsilon);
  }
  for (;;) {
    softmin_rows(cost, g, log_b, epsilon, f);
    softmin_cols(cost, f, log_a, epsilon, g);
    ++sol.iterations;
    sol.converged = row_violation(cost, f, g, epsilon) < tolerance;
    if (sol.converged || sol.iterations >= max_iterations) break;
  }
  finish_solution(cost, f, g, epsilon, sol);
  return sol;
}

EntropicSolution solve_symmetric_ot(const RowMatrix& cost, double epsilon,
                                    int max_iterations, double tolerance) {
  check_problem(cost, epsilon);
  if (cost.rows() != cost.cols()) throw Error("solve_symmetric_ot: cost must be square");
  const double log_a = -std::log(static_cast<double>(cost.rows()));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(cost.rows()), next(cost.rows());
  EntropicSolution sol;
  // Plain alternating updates oscillate on symmetric problems; averaging the
  // potential with its image does not.
  double eps = std::max(cost.maxCoeff(), epsilon);
  while (eps > epsilon && sol.iterations + 1 < max_iterations) {
    softmin_rows(cost, f, log_a, eps, next);
    f = 0.5 * (f + next);
    ++sol.iterations;
    eps = std::max(eps * kAnnealFactor, epsilon);
  }
  for (;;) {
    softmin_rows(cost, f, log_a, epsilon, next);
    f = 0.5 * (f + next);
    ++sol.iterations;
    sol.converged = row_violation(cost, f, f, epsilon) < tolerance;
    if (sol.converged || sol.iterations >= max_iterations) break;
  }
  finish_solution(cost, f, f, epsilon, sol);
  return sol;
}

namespace {

// d <P,C(x,y)> / dx for the squared Euclidean cost, given dL/dC = w.
void accumulate_cost_grad(const RowMatrix& w, const RowMatrix& x, const RowMatrix& y,
                          double scale, RowMatrix& gx, RowMatrix& gy) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      const double c = 2.0 * scale * w(i, j);
      if (c == 0.0) continue;
      const auto diff = x.row(i) - y.row(j);
      gx.row(i) += c * diff;
      gy.row(j) -= c * diff;
    }
  }
}

}  // namespace

IpmResult sinkhorn_ipm(const RowMatrix& x, const RowMatrix& y, const IpmConfig& config) {
  config.validate();
  IpmResult out;
  out.grad_x = RowMatrix::Zero(x.rows(), x.cols());
  out.grad_y = RowMatrix::Zero(y.rows(), y.cols());
  if (x.rows() == 0 || y.rows() == 0) {
    out.empty_group = true;
    return out;
  }
  if (x.cols() != y.cols()) throw Error("sinkhorn_ipm: dimension mismatch");

  const RowMatrix cxy = squared_distances(x, y);
  const RowMatrix cxx = squared_distances(x, x);
  const RowMatrix cyy = squared_distances(y, y);
  double eps = config.epsilon;
  const double mean_cost = cxy.mean();
  if (config.relative) {
    if (mean_cost <= 0.0) return out;  // every pair coincides
    eps *= mean_cost;
  }

  const auto sxy = solve_entropic_ot(cxy, eps, config.max_iterations, config.tolerance);
  const auto sxx = solve_symmetric_ot(cxx, eps, config.max_iterations, config.tolerance);
  const auto syy = solve_symmetric_ot(cyy, eps, config.max_iterations, config.tolerance);
  out.iterations = sxy.iterations + sxx.iterations + syy.iterations;
  out.converged = sxy.converged && sxx.converged && syy.converged;
  out.value = sxy.value - 0.5 * sxx.value - 0.5 * syy.value;

  // Envelope theorem: dOT/dC = P and dOT/deps = KL.
  RowMatrix wxy = sxy.plan;
  if (config.relative) {
    const double d_eps = sxy.kl - 0.5 * sxx.kl - 0.5 * syy.kl;
    wxy.array() += d_eps * config.epsilon / static_cast<double>(cxy.size());
  }
  accumulate_cost_grad(wxy, x, y, 1.0, out.grad_x, out.grad_y);
  RowMatrix scratch_x = RowMatrix::Zero(x.rows(), x.cols());
  accumulate_cost_grad(sxx.plan, x, x, -0.5, out.grad_x, scratch_x);
  out.grad_x += scratch_x;
  RowMatrix scratch_y = RowMatrix::Zero(y.rows(), y.cols());
  accumulate_cost_grad(syy.plan, y, y, -0.5, out.grad_y, scratch_y);
  out.grad_y += scratch_y;
  return out;
}

double entropic_ot(const RowMatrix& x, const RowMatrix& y, double epsilon,
                   int max_iterations, double tolerance) {
  return solve_entropic_ot(squared_distances(x, y), epsilon, max_iterations, tolerance).value;
}

}  // namespace csa
