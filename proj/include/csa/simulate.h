#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csa/data.h"
#include "csa/io.h"

namespace csa {

struct CovariateMarginal {
  enum class Family { kGaussian, kBernoulli };
  std::string name;
  Family family = Family::kGaussian;
  double mean = 0.0;  ///< Gaussian mean or Bernoulli rate
  double sd = 1.0;    ///< Gaussian only
};

/// Gompertz-Cox potential outcomes with logistic selection and log-normal
/// censoring. Arm-specific quantities are indexed [0] control, [1] treated.
struct SimConfig {
  std::vector<CovariateMarginal> covariates;
  Eigen::VectorXd beta[2];
  double alpha[2] = {0.0, 0.0};   ///< Gompertz shape (per day)
  double lambda[2] = {1.0, 1.0};  ///< Gompertz rate (per day)
  double a_off = 0.0;
  double b_scale = 1.0;
  double eta = 0.0;
  double mu_c = 0.0;
  double sigma_c = 1.0;
  std::vector<std::size_t> confounders;
  /// Optional covariate shift of the censoring location, log C ~ N(mu_c +
  /// x'gamma, sigma_c^2). Empty means covariate-independent censoring.
  Eigen::VectorXd censor_shift;
  /// Fraction of covariate cells blanked in the exported dataset (MCAR).
  double missing_rate = 0.0;
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  /// Seed for the treatment draws only; defaults to `seed`.
  std::optional<std::uint64_t> assignment_seed;

  std::size_t p() const { return covariates.size(); }
  /// Throws Error naming the violated constraint.
  void validate() const;

  Json to_json() const;
  static SimConfig from_json(const Json& j);

  /// Shipped scenario shaped after the semi-synthetic ACTG cohort: 23
  /// covariates, about 48.9% events and 55.9% treated.
  static SimConfig actg_synthetic();
  /// Same covariates and selection as actg_synthetic() but both arms share
  /// the control-arm outcome parameters.
  static SimConfig null_effect();
};

struct HiddenOutcome {
  double t0 = 0.0;
  double t1 = 0.0;
  double c = 0.0;
  double propensity = 0.0;
};

struct SimulatedCohort {
  RawDataset data;
  Eigen::MatrixXd x;  ///< complete covariates, before any masking
  std::vector<HiddenOutcome> hidden;
  std::size_t rejected_draws = 0;

  double event_rate() const;
  double treated_rate() const;
};

/// n x p covariate matrix from the configured marginals; row i depends only
/// on (seed, i).
Eigen::MatrixXd simulate_covariates(std::size_t n,
                                    const std::vector<CovariateMarginal>& marginals,
                                    std::uint64_t seed);

/// (a_off + sigmoid(eta * sum_k (x_k - mean_k))) / b_scale over the
/// confounder columns.
double propensity(const Eigen::VectorXd& x, const SimConfig& config,
                  const Eigen::VectorXd& confounder_means);

/// Inverse-CDF Gompertz-Cox draw for the given arm. Returns nullopt when the
/// log argument is not positive (possible for negative shape).
std::optional<double> sample_gompertz_cox(const Eigen::VectorXd& x, int arm,
                                          double u, const SimConfig& config);

SimulatedCohort assemble_cohort(const SimConfig& config, std::size_t n);
inline SimulatedCohort assemble_cohort(const SimConfig& config) {
  return assemble_cohort(config, config.n);
}

/// Data CSV (covariates, y, delta, a) in the format read by load_csv.
std::string cohort_csv(const SimulatedCohort& cohort);
/// Evaluation-only CSV: t0, t1, c, propensity per record.
std::string hidden_csv(const SimulatedCohort& cohort);
std::vector<HiddenOutcome> load_hidden_csv(const std::filesystem::path& path);

/// Schema matching cohort_csv (every covariate continuous).
CovariateSchema cohort_schema(const SimConfig& config);

}  // namespace csa
