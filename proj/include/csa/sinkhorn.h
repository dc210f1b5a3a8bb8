#pragma once

#include <Eigen/Dense>

#include "csa/data.h"
#include "csa/io.h"

namespace csa {

/// Entropic optimal transport between two uniform point clouds under the
/// squared Euclidean ground cost.
struct IpmConfig {
  /// Regularization strength. When `relative` is set the effective value is
  /// epsilon * mean(C_xy), which keeps the problem well conditioned for
  /// latent spaces of any scale.
  double epsilon = 0.01;
  bool relative = true;
  int max_iterations = 200;
  /// L1 violation of the row marginal at which iterations stop.
  double tolerance = 1e-6;

  void validate() const;
  Json to_json() const;
  static IpmConfig from_json(const Json& j);
};

struct EntropicSolution {
  double value = 0.0;  ///< dual objective, min <P,C> + eps KL(P | a b^T)
  double primal_value = 0.0;
  double kl = 0.0;     ///< KL(P | a b^T), the derivative of value in eps
  RowMatrix plan;      ///< optimal coupling P (rows sum to 1/n)
  int iterations = 0;
  double marginal_error = 0.0;
  bool converged = false;  ///< stopped on the tolerance, not the iteration cap
};

/// Log-domain Sinkhorn with epsilon annealing on an explicit cost matrix.
EntropicSolution solve_entropic_ot(const RowMatrix& cost, double epsilon,
                                   int max_iterations, double tolerance);

/// Same problem for a symmetric cost with identical marginals.
EntropicSolution solve_symmetric_ot(const RowMatrix& cost, double epsilon,
                                    int max_iterations, double tolerance);

RowMatrix squared_distances(const RowMatrix& x, const RowMatrix& y);

struct IpmResult {
  double value = 0.0;
  RowMatrix grad_x;  ///< d value / d x, same shape as x
  RowMatrix grad_y;
  int iterations = 0;  ///< summed over the three transport problems
  bool converged = true;
  bool empty_group = false;
};

/// Debiased Sinkhorn divergence OT(x,y) - OT(x,x)/2 - OT(y,y)/2 with its
/// gradient with respect to both point sets. Returns value 0 and
/// empty_group = true when either set has no rows.
IpmResult sinkhorn_ipm(const RowMatrix& x, const RowMatrix& y,
                       const IpmConfig& config);

/// Non-debiased entropic cost OT_eps(x, y) at an absolute epsilon.
double entropic_ot(const RowMatrix& x, const RowMatrix& y, double epsilon,
                   int max_iterations = 2000, double tolerance = 1e-10);

}  // namespace csa
