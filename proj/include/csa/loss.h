#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "csa/data.h"
#include "csa/model.h"
#include "csa/sinkhorn.h"

namespace csa {

/// Model outputs for one batch, one entry per subject in batch order.
/// Unused fields stay empty.
struct BatchDraws {
  std::vector<double> y;
  std::vector<int> delta;
  std::vector<int> a;
  Eigen::VectorXd event;    ///< sampled t_a, or the SR point prediction
  Eigen::VectorXd censor;   ///< sampled c_a (CSA-INFO)
  Eigen::VectorXd param_a;  ///< AFT location (mu) or scale (lambda)
  Eigen::VectorXd param_b;  ///< AFT sigma or shape k
  RowMatrix latent;         ///< encoder output, one row per subject

  std::size_t size() const { return y.size(); }
};

enum class AftFamily { kLogNormal, kWeibull };

/// Value and derivatives with respect to the per-subject model outputs.
struct LossTerm {
  double value = 0.0;
  Eigen::VectorXd d_event;
  Eigen::VectorXd d_censor;
  Eigen::VectorXd d_param_a;
  Eigen::VectorXd d_param_b;
};

// Batch means of the per-subject losses.
LossTerm csa_factual_term(const BatchDraws& batch);
LossTerm censoring_term(const BatchDraws& batch);
LossTerm time_order_term(const BatchDraws& batch);
LossTerm aft_nll_term(const BatchDraws& batch, AftFamily family);

double csa_factual_loss(const BatchDraws& batch);
double censoring_loss(const BatchDraws& batch);
double time_order_loss(const BatchDraws& batch);
/// Factual + censoring + time-order with unit weights.
double csa_info_loss(const BatchDraws& batch);
double aft_nll(const BatchDraws& batch, AftFamily family);
/// Same form as csa_factual_loss applied to deterministic predictions.
double sr_loss(const BatchDraws& batch);

/// Per-subject negative log-likelihood contribution and its partials.
struct AftPoint {
  double nll = 0.0;
  double d_a = 0.0;
  double d_b = 0.0;
};
AftPoint aft_point(double y, int delta, double a, double b, AftFamily family);

struct ObjectiveOptions {
  double alpha = 0.0;
  IpmConfig ipm;
  /// When false the balancing term is not evaluated at all.
  bool compute_ipm = true;
  double censoring_weight = 1.0;
  double time_order_weight = 1.0;
};

/// Per-arm losses summed without treated-fraction weights plus alpha times
/// the Sinkhorn divergence between treated and control latents.
struct Objective {
  std::array<double, 2> factual{};  ///< factual loss per arm (mean over arm)
  double ipm = 0.0;
  double censoring = 0.0;   ///< summed over arms, CSA-INFO only
  double time_order = 0.0;  ///< summed over arms, CSA-INFO only
  double total = 0.0;
  bool ipm_empty_group = false;
  bool ipm_converged = true;
  LossTerm grad;       ///< d total / d per-subject outputs, batch order
  RowMatrix d_latent;  ///< d total / d latent
};

Objective total_objective(const BatchDraws& batch, Mode mode, const ObjectiveOptions& options);

/// Treated-fraction weighted factual loss u L1 + (1-u) L0, for reporting.
double weighted_factual(const Objective& objective, const BatchDraws& batch);

/// log P(Z > z) for a standard normal Z, accurate in the far tail.
double log_normal_tail(double z);

}  // namespace csa
