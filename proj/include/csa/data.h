#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csa/io.h"

namespace csa {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ColumnKind { kContinuous, kCategorical };

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
};

/// Ordered covariate columns. Names are unique and there is at least one.
class CovariateSchema {
 public:
  CovariateSchema() = default;
  explicit CovariateSchema(std::vector<ColumnSpec> columns);

  const std::vector<ColumnSpec>& columns() const { return columns_; }
  std::size_t size() const { return columns_.size(); }
  const ColumnSpec& operator[](std::size_t i) const { return columns_[i]; }

  Json to_json() const;
  static CovariateSchema from_json(const Json& j);

 private:
  std::vector<ColumnSpec> columns_;
};

/// Names of the outcome columns in an input CSV.
struct ColumnMap {
  std::string time = "y";
  std::string event = "delta";
  std::string treatment = "a";
};

enum class Split : std::uint8_t { kTrain = 0, kValid = 1, kTest = 2 };
const char* split_name(Split s);
Split parse_split(const std::string& s);

/// Observed (y, delta, a) per record, in record order.
struct Outcomes {
  std::vector<double> y;
  std::vector<int> delta;
  std::vector<int> a;

  std::size_t size() const { return y.size(); }
};

/// One covariate column before encoding. Continuous columns use `numeric`,
/// categorical columns use `level`; `missing` flags cells awaiting
/// imputation.
struct RawColumn {
  std::vector<double> numeric;
  std::vector<std::string> level;
  std::vector<bool> missing;
};

/// Dataset as ingested: typed covariate cells with missing flags, plus
/// outcomes and (once assigned) split labels.
struct RawDataset {
  CovariateSchema schema;
  std::vector<RawColumn> columns;
  Outcomes outcomes;
  std::vector<Split> split;

  std::size_t size() const { return outcomes.size(); }
  std::size_t missing_count() const;
};

/// One unit after encoding.
struct SubjectRecord {
  Eigen::VectorXd x;
  int a = 0;
  double y = 0.0;
  int delta = 0;
};

/// Encoded dataset: one dense row per record (standardized continuous
/// columns followed by one-hot blocks, in schema order).
struct SurvivalDataset {
  std::vector<std::string> feature_names;
  RowMatrix x;
  Outcomes outcomes;
  std::vector<Split> split;

  std::size_t size() const { return outcomes.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(x.cols()); }
  SubjectRecord record(std::size_t i) const;
  std::vector<std::size_t> indices(Split s) const;
};

/// Per encoded column transform, fitted on the training split.
struct FeatureTransform {
  std::string column;
  std::optional<std::string> level;  ///< set for one-hot indicators
  double mean = 0.0;
  double scale = 1.0;
};

struct Standardization {
  std::vector<FeatureTransform> features;
  std::vector<std::string> warnings;

  Json to_json() const;
  static Standardization from_json(const Json& j);
};

struct ProxyCounterfactual {
  std::size_t subject = 0;
  double y_cf = 0.0;
  int delta_cf = 0;
  std::size_t neighbor = 0;  ///< record index of the matched train subject
  double distance = 0.0;
};

RawDataset load_csv(const std::filesystem::path& path,
                    const CovariateSchema& schema, const ColumnMap& map);

/// Gaps filled with the training-split median (continuous) or mode
/// (categorical, ties to the lexicographically smallest level). Requires
/// split labels.
RawDataset impute_missing(const RawDataset& data);

struct StandardizeResult {
  SurvivalDataset dataset;
  Standardization transform;
};

/// Fits the transform on the training split and applies it to all rows.
StandardizeResult standardize(const RawDataset& data);

/// Applies an existing transform (e.g. loaded from a sidecar).
SurvivalDataset apply_standardization(const RawDataset& data,
                                      const Standardization& transform);

/// 70/15/15 split stratified over the four (event x treatment) cells.
std::vector<Split> stratified_split(const Outcomes& outcomes,
                                    std::uint64_t seed);
RawDataset with_split(RawDataset data, std::uint64_t seed);

/// Nearest opposite-arm training subject (Euclidean, ties to the lowest
/// record index) for every record in `query`.
std::vector<ProxyCounterfactual> nn_proxy_counterfactuals(
    const SurvivalDataset& data, Split query = Split::kValid);

}  // namespace csa
