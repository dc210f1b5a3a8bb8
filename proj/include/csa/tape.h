#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "csa/data.h"

namespace csa {

/// Named dense tensors packed into one flat vector. Views are row-major.
class ParameterSet {
 public:
  struct Tensor {
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::size_t offset = 0;
    std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
  };

  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t index_of(const std::string& name) const;

  Eigen::VectorXd& values() { return values_; }
  const Eigen::VectorXd& values() const { return values_; }

  Eigen::Map<RowMatrix> view(std::size_t slot);
  Eigen::Map<const RowMatrix> view(std::size_t slot) const;

  /// Same names and shapes in the same order.
  bool same_layout(const ParameterSet& other) const;

 private:
  std::vector<Tensor> tensors_;
  Eigen::VectorXd values_;
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode recorder over batch matrices (rows are subjects). Gradients
/// are seeded externally with seed() and propagated by backward().
class Tape {
 public:
  Var constant(RowMatrix value);
  /// Records a copy of a parameter tensor; gradients reach it through
  /// accumulate().
  Var parameter(const ParameterSet& params, std::size_t slot);

  const RowMatrix& value(Var v) const { return nodes_[v.id].value; }
  /// Adds g to the gradient of v.
  void seed(Var v, const RowMatrix& g);
  void backward();
  /// Adds every parameter gradient into grad (length params.size()).
  void accumulate(const ParameterSet& params, Eigen::VectorXd& grad) const;
  std::size_t size() const { return nodes_.size(); }

  // Operations. Shapes: x is n x k; weights are out x in.
  Var affine(Var x, Var weight, Var bias);      ///< x W^T + b
  Var matmul_nt(Var x, Var weight);             ///< x W^T
  Var add(Var a, Var b);
  Var add_scalar(Var x, double c);
  Var scale(Var x, double c);
  Var leaky_relu(Var x, double slope);
  Var tanh(Var x);
  Var exp(Var x);
  Var softplus(Var x);
  /// Elementwise product with a constant mask.
  Var mask(Var x, const RowMatrix& m);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
  Var gather_rows(Var x, const std::vector<Eigen::Index>& rows);

  /// Running moments of one batch-norm layer (length = feature count).
  /// `update_*` may be null, in which case training mode leaves them alone.
  struct RunningMoments {
    const double* mean = nullptr;
    const double* var = nullptr;
    double* update_mean = nullptr;
    double* update_var = nullptr;
    double momentum = 0.9;
    double epsilon = 1e-5;
  };
  /// Training mode normalizes with the batch moments; evaluation mode with
  /// the running ones.
  Var batch_norm(Var x, Var gamma, Var beta, bool training,
                 const RunningMoments& moments);

 private:
  struct Node {
    RowMatrix value;
    RowMatrix grad;
    bool needs_grad = false;
    std::ptrdiff_t param_slot = -1;
    std::function<void()> backward;
  };

  Var push(RowMatrix value, bool needs_grad, std::function<void()> backward = {});
  RowMatrix& grad(std::size_t id);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  std::vector<Node> nodes_;
};

}  // namespace csa
