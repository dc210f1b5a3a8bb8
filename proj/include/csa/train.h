#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csa/data.h"
#include "csa/loss.h"
#include "csa/model.h"

namespace csa {

struct TrainConfig {
  Mode mode = Mode::kCsa;
  std::vector<double> alpha_grid{0.0, 0.1, 1.0, 10.0, 100.0};
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 200;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  double init_range = 0.01;
  std::uint64_t seed = 1;
  /// Draws per subject and arm at evaluation time.
  std::size_t samples = 200;
  /// Noise replicates averaged in the validation losses (fixed seed).
  std::size_t validation_draws = 10;
  bool stratified_batches = true;
  /// Setting this false removes the balancing term from the computation
  /// entirely (used to check that alpha = 0 is equivalent).
  bool ipm_enabled = true;
  double censoring_weight = 1.0;
  double time_order_weight = 1.0;
  Architecture architecture;
  IpmConfig ipm;

  void validate() const;
  Json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const Json& j, const TrainConfig& base);
  static TrainConfig from_json(const Json& j);
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::size_t step = 0;
};

/// Bias-corrected Adam; the state is sized lazily on the first call.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state,
               const TrainConfig& config);

/// Minibatches over the given records. With stratification the treated and
/// control lists are shuffled separately and dealt evenly, so every batch
/// keeps the overall treated fraction up to one subject.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& treated,
                                                   const std::vector<std::size_t>& control,
                                                   std::size_t batch_size, bool stratified,
                                                   Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  std::array<double, 2> factual{};
  double ipm = 0.0;
  double censoring = 0.0;
  double time_order = 0.0;
  double total = 0.0;
  double valid_factual = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  std::size_t empty_group_batches = 0;
};

struct BatchStep {
  Objective objective;
  Eigen::VectorXd grad;  ///< d total / d parameters
};

/// Training-phase objective of one batch and its full parameter gradient.
/// Dropout masks and noise come from `rng`; running moments are updated
/// only when `update_running` is set.
BatchStep batch_gradient(Model& model, const RowMatrix& x, std::span<const int> arms,
                         std::span<const double> y, std::span<const int> delta, Rng& rng,
                         const ObjectiveOptions& options, bool update_running = false);

/// Median of the training-split observed times; the output time scale.
double training_time_scale(const SurvivalDataset& data);

TrainResult train_one(const SurvivalDataset& data, Mode mode, double alpha,
                      const TrainConfig& config);

struct ValidationLoss {
  double factual = 0.0;
  double counterfactual = 0.0;
  double total = 0.0;
};

/// Mode-specific loss of the model on explicit (x, a, y, delta) tuples in
/// evaluation phase, averaged over `draws` noise replicates seeded by
/// `seed`. Tuples are independent, so the value does not depend on order.
double tuple_loss(const Model& model, const RowMatrix& x, std::span<const int> arms,
                  std::span<const double> y, std::span<const int> delta, std::size_t draws,
                  std::uint64_t seed, const TrainConfig& config);

/// Factual loss on the validation split and counterfactual loss on the
/// proxy tuples (arm flipped, neighbour outcome).
ValidationLoss validation_objective(const Model& model, const SurvivalDataset& data,
                                    const std::vector<ProxyCounterfactual>& proxies,
                                    const TrainConfig& config);

struct CandidateReport {
  double alpha = 0.0;
  ValidationLoss valid;
  bool diverged = false;
  std::string error;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> curve;
};

struct TrainReport {
  Mode mode = Mode::kCsa;
  double chosen_alpha = 0.0;
  std::size_t chosen_index = 0;
  double time_scale = 1.0;
  std::vector<CandidateReport> candidates;

  Json to_json(const TrainConfig& config) const;
  /// epoch, mode, alpha, factual_a0, factual_a1, ipm, censoring, time_order,
  /// total, valid_factual
  std::string curves_csv() const;
};

/// Index of the minimal total among non-diverged candidates, ties to the
/// smallest alpha. Throws when every candidate diverged.
std::size_t select_candidate(const std::vector<CandidateReport>& candidates);

struct GridResult {
  TrainReport report;
  Model model;  ///< chosen candidate
};

/// Trains one model per alpha (identical initialization seed), using up to
/// `threads` workers.
GridResult alpha_grid_search(const SurvivalDataset& data, const TrainConfig& config,
                             std::size_t threads = 1);

/// Worker count from CSA_THREADS, defaulting to the hardware concurrency.
std::size_t thread_budget();

}  // namespace csa
