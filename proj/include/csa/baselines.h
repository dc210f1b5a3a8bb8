#pragma once

#include <span>
#include <string>

#include <Eigen/Dense>

#include "csa/data.h"

namespace csa {

struct PropensityOptions {
  /// L2 penalty on the slopes (not the intercept), per subject.
  double ridge = 0.0;
  std::size_t max_iterations = 100;
  double tolerance = 1e-8;
};

struct PropensityModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  bool fitted = false;
  bool converged = false;
  std::size_t iterations = 0;
  double log_likelihood = 0.0;  ///< mean per subject, penalty excluded

  /// Predicted P(A = 1 | x) per row.
  Eigen::VectorXd predict(const RowMatrix& x) const;
};

/// Maximum-likelihood logistic regression of the arm on x by damped Newton.
/// Throws on (quasi-)separation, suggesting the ridge option.
PropensityModel fit_logistic_propensity(const RowMatrix& x, std::span<const int> arms,
                                        const PropensityOptions& options = {});
PropensityModel fit_logistic_propensity(const SurvivalDataset& data,
                                        const PropensityOptions& options = {});

enum class WeightScheme { kUniform, kIpw, kOw };
const char* scheme_name(WeightScheme s);  ///< "uniform", "ipw", "ow"
WeightScheme parse_scheme(const std::string& s);

/// Unnormalized per-subject weights from propensity scores.
Eigen::VectorXd raw_weights(const Eigen::VectorXd& propensity, std::span<const int> arms,
                            WeightScheme scheme);
/// Rescales weights to mean 1 within each arm.
Eigen::VectorXd normalize_per_arm(const Eigen::VectorXd& weights, std::span<const int> arms);
Eigen::VectorXd compute_weights(const PropensityModel& model, const SurvivalDataset& data,
                                WeightScheme scheme);

/// Weighted Cox log partial likelihood of the treatment-only model, with
/// Breslow handling of tied event times.
double weighted_partial_loglik(double beta, std::span<const double> y, std::span<const int> delta,
                               std::span<const int> arms, const Eigen::VectorXd& weights);

struct CoxModel {
  double beta = 0.0;
  WeightScheme scheme = WeightScheme::kUniform;
  bool converged = false;
  std::size_t iterations = 0;
  double information = 0.0;  ///< observed information at beta
  double log_likelihood = 0.0;
};

CoxModel fit_weighted_coxph(std::span<const double> y, std::span<const int> delta,
                            std::span<const int> arms, const Eigen::VectorXd& weights,
                            WeightScheme scheme = WeightScheme::kUniform);

struct CoxHazardRatio {
  double hr = 1.0;
  double ci_low = 1.0;
  double ci_high = 1.0;
  double se = 0.0;
};

/// exp(beta) with the Wald interval exp(beta +- 1.96 se).
CoxHazardRatio coxph_hr(const CoxModel& model);

}  // namespace csa
