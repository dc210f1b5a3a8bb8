#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "csa/data.h"
#include "csa/survival.h"

namespace csa {

/// Per-row median (mean of the two middle values for an even count).
Eigen::VectorXd row_medians(const RowMatrix& draws);
Eigen::VectorXd row_means(const RowMatrix& draws);

/// Classical product-limit estimate. The grid is t = 0 followed by the
/// distinct observed times.
SurvivalCurve km_curve(std::span<const double> y, std::span<const int> delta);

/// Product-limit recursion over per-subject time summaries `summary` (one
/// per subject) on the grid t = 0, grid[0], ..., grid[J-1]. At grid time
/// k the failures are subjects with delta = 1 whose summary falls in
/// [grid[k], grid[k+1]) (the first bin also takes summaries before grid[0];
/// the last bin is the single point grid[J-1]); the risk set is everyone
/// whose summary is not before grid[k].
SurvivalCurve pkm_from_summaries(std::span<const double> summary, std::span<const int> delta,
                                 std::span<const double> grid);

/// Distinct observed times in increasing order.
std::vector<double> distinct_times(std::span<const double> y);

/// PKM for one arm across the cohort: summaries are per-subject medians of
/// `draws`, the grid is the distinct observed times.
SurvivalCurve pkm_curve(const RowMatrix& draws, std::span<const double> y,
                        std::span<const int> delta);

struct HrOptions {
  /// The slope fit uses grid points where both curves lie in this band.
  double window_low = 0.1;
  double window_high = 0.9;
  std::size_t bootstrap = 200;
  std::uint64_t seed = 7;
  double level = 0.95;
};

struct HazardRatioEstimate {
  std::vector<double> time;  ///< grid points of the fit window
  std::vector<double> hr;
  std::vector<double> ci_low;
  std::vector<double> ci_high;
  double point = 1.0;  ///< median of hr over the window
  double point_ci_low = 1.0;
  double point_ci_high = 1.0;
  double slope[2] = {0.0, 0.0};
  std::size_t bootstrap_used = 0;
  std::size_t bootstrap_failed = 0;
  SurvivalCurve curve[2];  ///< PKM curves by arm
};

/// Ratio of hazards from two survival curves on a common grid (leading
/// t = 0 point included), using least-squares slopes over the fit window.
HazardRatioEstimate hazard_ratio_from_curves(const SurvivalCurve& control,
                                             const SurvivalCurve& treated,
                                             const HrOptions& options);

/// Marginal hazard ratio from per-subject time summaries under each arm,
/// with a subject-level percentile bootstrap.
HazardRatioEstimate nonparam_hr_from_summaries(std::span<const double> control,
                                               std::span<const double> treated,
                                               std::span<const double> y,
                                               std::span<const int> delta,
                                               const HrOptions& options);

/// Marginal hazard ratio from model draws (per-subject medians).
HazardRatioEstimate nonparam_hr(const EventTimeSamples& samples, std::span<const double> y,
                                std::span<const int> delta, const HrOptions& options);

struct ConditionalHrOptions {
  double window_low = 0.1;
  double window_high = 0.9;
  std::size_t min_draws = 50;
};

struct ConditionalHr {
  std::vector<double> grid;
  RowMatrix hr;  ///< subjects x grid
};

/// Silverman bandwidth 0.9 min(sd, IQR/1.34) n^(-1/5); throws on zero spread.
double silverman_bandwidth(std::span<const double> values);

/// Per-subject HR(t|x) traces from Gaussian-kernel smoothed survival of each
/// subject's draws on a shared grid.
ConditionalHr conditional_hr(const EventTimeSamples& samples, std::span<const double> grid,
                             const ConditionalHrOptions& options = {});

/// `count` evenly spaced points between the 5th and 95th percentiles of y.
std::vector<double> quantile_grid(std::span<const double> y, std::size_t count = 50);

/// Pairs (i, j) with y_i < y_j and delta_i = 1 are comparable; concordant
/// when pred_i < pred_j, ties in prediction count one half.
double c_index(std::span<const double> predicted, std::span<const double> y,
               std::span<const int> delta);

/// Slope of the affine least-squares fit of model PKM probabilities on the
/// data KM probabilities at the distinct event times.
double calibration_slope(const RowMatrix& draws, std::span<const double> y,
                         std::span<const int> delta);

/// Mean over rows of sample sd / mean.
double mean_cov(const RowMatrix& draws);

/// Row i is subject i's draws under its observed arm.
RowMatrix factual_draws(const EventTimeSamples& samples, std::span<const int> arms);

/// Per-subject difference of mean arm-1 and arm-0 draws.
Eigen::VectorXd ite_expected_lifetime(const EventTimeSamples& samples);

double pehe(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);
double ate_error(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth);

struct Clustering {
  std::vector<int> labels;  ///< 0-based, numbered by first appearance
  RowMatrix mean_traces;    ///< k x grid
  std::vector<std::size_t> sizes;
};

/// Agglomerative clustering of trace rows (average linkage, Euclidean),
/// cut at k clusters.
Clustering stratify_hr_traces(const RowMatrix& traces, std::size_t k);

}  // namespace csa
