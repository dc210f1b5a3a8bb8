#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "csa/baselines.h"
#include "csa/data.h"
#include "csa/metrics.h"
#include "csa/simulate.h"
#include "csa/train.h"

namespace csa {

namespace fs = std::filesystem;

/// Where the cohort comes from: a simulator configuration (preset name,
/// JSON path or inline object) materialized as CSV under the output
/// directory, or existing CSV files.
struct DatasetSource {
  std::optional<SimConfig> simulate;
  fs::path data_csv;
  fs::path hidden_csv;  ///< optional hidden potential outcomes
  std::optional<CovariateSchema> schema;
  ColumnMap columns;
};

struct MetricsOptions {
  std::size_t bootstrap = 200;
  double window_low = 0.1;
  double window_high = 0.9;
  std::size_t clusters = 3;
  std::size_t grid_points = 50;
  /// Fail instead of omitting PEHE / ATE error when the truth is unknown.
  bool require_truth = false;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<Mode> modes{Mode::kCsaInfo, Mode::kSr};
  TrainConfig train;
  /// Per-mode TrainConfig patches, keyed by mode name.
  std::map<std::string, Json> mode_overrides;
  MetricsOptions metrics;
  std::vector<WeightScheme> baselines;
  std::uint64_t seed = 20210814;
  fs::path output = "out";

  void validate() const;
  /// Relative paths resolve against `base_dir`.
  static ExperimentConfig from_json(const Json& j, const fs::path& base_dir = ".");
  Json to_json() const;
  TrainConfig train_config(Mode mode) const;
};

ExperimentConfig load_experiment(const fs::path& path);

/// Loaded and encoded cohort with optional hidden outcomes, in record order.
struct PreparedData {
  SurvivalDataset data;
  Standardization transform;
  std::vector<HiddenOutcome> hidden;
};

/// Writes the simulated cohort files when the source is a simulator, then
/// loads, splits, imputes and standardizes. With `transform` supplied the
/// stored standardization is reused.
PreparedData prepare_data(const ExperimentConfig& config,
                          const std::optional<Standardization>& transform = std::nullopt);

fs::path mode_dir(const ExperimentConfig& config, Mode mode);

/// Writes cohort.csv, hidden.csv and sim_config.json into `out`.
void cmd_simulate(const SimConfig& config, const fs::path& out, std::ostream& log);
void cmd_train(const ExperimentConfig& config, std::ostream& log);
void cmd_evaluate(const ExperimentConfig& config, std::ostream& log);
/// Comparison table over metrics reports; writes comparison.csv/json.
Json cmd_compare(const std::vector<fs::path>& reports, const fs::path& out, std::ostream& log);
/// simulate, train every mode, evaluate, compare.
void cmd_reproduce(const ExperimentConfig& config, std::ostream& log);

/// Metrics for one trained model on the test split.
Json evaluate_model(const Model& model, const PreparedData& prepared, const ExperimentConfig& config,
                    const fs::path& out_dir);

/// Weighted CoxPH fits on the full dataset, one entry per scheme.
Json baseline_report(const SurvivalDataset& data, const std::vector<WeightScheme>& schemes);

/// Ground-truth HR of the hidden potential outcomes (point masses, all
/// events) on the observed-time grid of the given subjects.
HazardRatioEstimate ground_truth_hr(const PreparedData& prepared, const std::vector<std::size_t>& subjects,
                                    const HrOptions& options);

/// Fixed column order of the comparison table.
const std::vector<std::string>& comparison_columns();

}  // namespace csa
