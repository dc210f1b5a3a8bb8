#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "csa/random.h"
#include "csa/survival.h"
#include "csa/tape.h"

namespace csa {

enum class Mode { kCsa, kCsaInfo, kAftLogNormal, kAftWeibull, kSr };
const char* mode_name(Mode m);  ///< "CSA", "CSA-INFO", "AFT-LN", "AFT-W", "SR"
Mode parse_mode(const std::string& s);
std::vector<Mode> parse_modes(const std::string& comma_list);
bool has_censor_head(Mode m);
bool is_aft(Mode m);

enum class Phase { kTrain, kEval };
enum class Role { kEvent = 0, kCensor = 1 };

struct Architecture {
  Eigen::Index hidden = 100;       ///< encoder layer widths
  Eigen::Index latent = 100;       ///< representation size d
  Eigen::Index head_hidden = 100;  ///< first head layer
  Eigen::Index head_joint = 200;   ///< head layer fed with [h, noise]
  Eigen::Index noise_dim = 100;
  double dropout = 0.2;
  double leaky_slope = 0.01;
  double bn_momentum = 0.9;
  /// Uniform(0,1) noise by default; Gaussian is an experimental option.
  bool gaussian_noise = false;

  void validate() const;
  Json to_json() const;
  static Architecture from_json(const Json& j);
};

/// Per-arm outputs of a batch forward pass. `rows` lists the batch rows
/// routed through this arm's heads; the output vars have one row each.
struct ArmOutput {
  std::vector<Eigen::Index> rows;
  Var event;    ///< sampled event time (CSA family) or point prediction (SR)
  Var censor;   ///< sampled censoring time (CSA-INFO)
  Var param_a;  ///< AFT: mu (log-normal) or lambda (Weibull)
  Var param_b;  ///< AFT: sigma or k
  bool present() const { return !rows.empty(); }
};

struct BatchForward {
  Var latent;
  std::array<ArmOutput, 2> arms;
};

/// Encoder, planar flows and arm-specific heads over one flat parameter
/// vector. Batch-norm running moments live in a separate buffer set.
class Model {
 public:
  Model(Mode mode, Eigen::Index input_dim, Architecture arch, double time_scale);

  /// Weights and biases Uniform(-range, range); batch-norm scale 1, shift 0.
  void initialize(std::uint64_t seed, double range = 0.01);

  Mode mode() const { return mode_; }
  Eigen::Index input_dim() const { return input_dim_; }
  const Architecture& architecture() const { return arch_; }
  double time_scale() const { return time_scale_; }

  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& buffers() { return buffers_; }
  const ParameterSet& buffers() const { return buffers_; }

  /// Full forward for a batch with factual arms. In training phase dropout
  /// masks and noise come from `rng`; running moments are updated only when
  /// `update_running` is set.
  BatchForward forward(Tape& tape, const RowMatrix& x, std::span<const int> arms,
                       Phase phase, Rng& rng, bool update_running = false);
  /// Same without touching running moments.
  BatchForward forward(Tape& tape, const RowMatrix& x, std::span<const int> arms,
                       Phase phase, Rng& rng) const;

  /// Evaluation-phase forward with caller-supplied noise rows (batch order,
  /// n x noise_dim each); the censoring noise is used by CSA-INFO only.
  BatchForward forward_eval(Tape& tape, const RowMatrix& x, std::span<const int> arms,
                            const RowMatrix& event_noise, const RowMatrix& censor_noise) const;

  // Building blocks, recorded on a tape.
  Var encode(Tape& tape, Var x, Phase phase, Rng* rng, ParameterSet* update) const;
  Var planar(Tape& tape, Var noise, Role role) const;
  Var sample_head(Tape& tape, Var latent, Var noise, int arm, Role role, Phase phase,
                  Rng* rng, ParameterSet* update) const;
  std::pair<Var, Var> aft_head(Tape& tape, Var latent, int arm, Phase phase, Rng* rng,
                               ParameterSet* update) const;
  Var sr_head(Tape& tape, Var latent, int arm, Phase phase, Rng* rng,
              ParameterSet* update) const;

  // Convenience evaluations without gradients.
  RowMatrix encode(const RowMatrix& x, Phase phase, Rng* rng = nullptr) const;
  RowMatrix planar_transform(const RowMatrix& noise, Role role) const;
  Eigen::VectorXd sample_time(const RowMatrix& latent, int arm, Role role,
                              const RowMatrix& noise, Phase phase, Rng* rng = nullptr) const;
  std::pair<Eigen::VectorXd, Eigen::VectorXd> aft_forward(const RowMatrix& latent,
                                                          int arm) const;
  Eigen::VectorXd sr_forward(const RowMatrix& latent, int arm) const;

  /// n x noise_dim noise matrix.
  RowMatrix draw_noise(Eigen::Index n, Rng& rng) const;

  /// `draws` samples per subject and arm of the event time (eval phase).
  /// SR repeats its point prediction. Deterministic in (params, x, seed).
  EventTimeSamples sample_potential_outcomes(const RowMatrix& x, std::size_t draws,
                                             std::uint64_t seed) const;

 private:
  struct Dense {
    std::size_t weight, bias;
  };
  struct Norm {
    std::size_t gamma, beta, mean, var;
  };
  struct Block {
    Dense dense;
    Norm norm;
  };
  struct Flow {
    std::size_t u, w, b;
  };
  struct SampleHead {
    Block first, joint;
    Dense out;
  };
  struct PointHead {
    Block first;
    Dense out;
  };

  Dense add_dense(const std::string& name, Eigen::Index in, Eigen::Index out);
  Block add_block(const std::string& name, Eigen::Index in, Eigen::Index out);
  Var apply_block(Tape& tape, Var x, const Block& b, Phase phase, Rng* rng,
                  ParameterSet* update) const;
  Var apply_dense(Tape& tape, Var x, const Dense& d) const;
  Var positive_time(Tape& tape, Var z) const;

  Mode mode_;
  Eigen::Index input_dim_;
  Architecture arch_;
  double time_scale_;
  ParameterSet params_;
  ParameterSet buffers_;

  Block enc1_, enc2_;
  std::array<Flow, 2> flows_{};                          // by role
  std::array<std::array<SampleHead, 2>, 2> sample_{};    // [role][arm]
  std::array<PointHead, 2> point_{};                     // AFT or SR, by arm
};

/// Binary checkpoint: magic, JSON manifest (mode, architecture, tensor
/// shapes, extras), then little-endian float64 parameters and buffers.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const Json& extra = Json::object());
struct LoadedCheckpoint {
  Model model;
  Json extra;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csa
