#include "csa/tape.h"

#include <cmath>

namespace csa {

std::size_t ParameterSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  for (const auto& t : tensors_) {
    if (t.name == name) throw Error("duplicate parameter tensor " + name);
  }
  Tensor t{std::move(name), rows, cols, size()};
  const Eigen::Index old = values_.size();
  values_.conservativeResize(old + rows * cols);
  values_.tail(rows * cols).setZero();
  tensors_.push_back(std::move(t));
  return tensors_.size() - 1;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  throw Error("unknown parameter tensor " + name);
}

Eigen::Map<RowMatrix> ParameterSet::view(std::size_t slot) {
  const Tensor& t = tensors_.at(slot);
  return {values_.data() + t.offset, t.rows, t.cols};
}

Eigen::Map<const RowMatrix> ParameterSet::view(std::size_t slot) const {
  const Tensor& t = tensors_.at(slot);
  return {values_.data() + t.offset, t.rows, t.cols};
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto &a = tensors_[i], &b = other.tensors_[i];
    if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
  }
  return true;
}

Var Tape::push(RowMatrix value, bool needs_grad, std::function<void()> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

RowMatrix& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = RowMatrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::constant(RowMatrix value) { return push(std::move(value), false); }

Var Tape::parameter(const ParameterSet& params, std::size_t slot) {
  Var v = push(params.view(slot), true);
  nodes_[v.id].param_slot = static_cast<std::ptrdiff_t>(slot);
  return v;
}

void Tape::seed(Var v, const RowMatrix& g) {
  if (g.rows() != value(v).rows() || g.cols() != value(v).cols()) {
    throw Error("Tape::seed: gradient shape mismatch");
  }
  if (!needs(v)) return;
  grad(v.id) += g;
}

void Tape::backward() {
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

void Tape::accumulate(const ParameterSet& params, Eigen::VectorXd& out) const {
  if (static_cast<std::size_t>(out.size()) != params.size()) {
    throw Error("Tape::accumulate: gradient vector has wrong length");
  }
  for (const Node& n : nodes_) {
    if (n.param_slot < 0 || n.grad.size() == 0) continue;
    const auto& t = params.tensors()[static_cast<std::size_t>(n.param_slot)];
    out.segment(static_cast<Eigen::Index>(t.offset), static_cast<Eigen::Index>(t.size())) +=
        Eigen::Map<const Eigen::VectorXd>(n.grad.data(), n.grad.size());
  }
}

Var Tape::affine(Var x, Var weight, Var bias) {
  const auto& w = value(weight);
  const auto& b = value(bias);
  if (value(x).cols() != w.cols() || b.rows() != 1 || b.cols() != w.rows()) {
    throw Error("Tape::affine: shape mismatch");
  }
  RowMatrix y = value(x) * w.transpose();
  y.rowwise() += b.row(0);
  return push(std::move(y), needs(x) || needs(weight) || needs(bias),
              [this, x, weight, bias, id = nodes_.size()] {
                const RowMatrix& g = nodes_[id].grad;
                if (needs(x)) grad(x.id).noalias() += g * value(weight);
                if (needs(weight)) grad(weight.id).noalias() += g.transpose() * value(x);
                if (needs(bias)) grad(bias.id) += g.colwise().sum();
              });
}

Var Tape::matmul_nt(Var x, Var weight) {
  if (value(x).cols() != value(weight).cols()) throw Error("Tape::matmul_nt: shape mismatch");
  RowMatrix y = value(x) * value(weight).transpose();
  return push(std::move(y), needs(x) || needs(weight), [this, x, weight, id = nodes_.size()] {
    const RowMatrix& g = nodes_[id].grad;
    if (needs(x)) grad(x.id).noalias() += g * value(weight);
    if (needs(weight)) grad(weight.id).noalias() += g.transpose() * value(x);
  });
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols()) {
    throw Error("Tape::add: shape mismatch");
  }
  return push(value(a) + value(b), needs(a) || needs(b), [this, a, b, id = nodes_.size()] {
    const RowMatrix& g = nodes_[id].grad;
    if (needs(a)) grad(a.id) += g;
    if (needs(b)) grad(b.id) += g;
  });
}

Var Tape::add_scalar(Var x, double c) {
  RowMatrix y = value(x).array() + c;
  return push(std::move(y), needs(x),
              [this, x, id = nodes_.size()] { grad(x.id) += nodes_[id].grad; });
}

Var Tape::scale(Var x, double c) {
  return push(value(x) * c, needs(x),
              [this, x, c, id = nodes_.size()] { grad(x.id) += c * nodes_[id].grad; });
}

Var Tape::leaky_relu(Var x, double slope) {
  RowMatrix y = value(x).unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
  return push(std::move(y), needs(x), [this, x, slope, id = nodes_.size()] {
    grad(x.id).array() +=
        nodes_[id].grad.array() *
        value(x).array().unaryExpr([slope](double v) { return v > 0 ? 1.0 : slope; });
  });
}

Var Tape::tanh(Var x) {
  RowMatrix y = value(x).array().tanh();
  return push(std::move(y), needs(x), [this, x, id = nodes_.size()] {
    const auto& ty = nodes_[id].value.array();
    grad(x.id).array() += nodes_[id].grad.array() * (1.0 - ty * ty);
  });
}

Var Tape::exp(Var x) {
  RowMatrix y = value(x).array().exp();
  return push(std::move(y), needs(x), [this, x, id = nodes_.size()] {
    grad(x.id).array() += nodes_[id].grad.array() * nodes_[id].value.array();
  });
}

namespace {
double softplus_value(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Var Tape::softplus(Var x) {
  RowMatrix y = value(x).unaryExpr(&softplus_value);
  return push(std::move(y), needs(x), [this, x, id = nodes_.size()] {
    grad(x.id).array() += nodes_[id].grad.array() * value(x).unaryExpr(&sigmoid_value).array();
  });
}

Var Tape::mask(Var x, const RowMatrix& m) {
  if (m.rows() != value(x).rows() || m.cols() != value(x).cols()) {
    throw Error("Tape::mask: shape mismatch");
  }
  RowMatrix y = value(x).cwiseProduct(m);
  return push(std::move(y), needs(x), [this, x, m, id = nodes_.size()] {
    grad(x.id) += nodes_[id].grad.cwiseProduct(m);
  });
}

Var Tape::concat_cols(Var a, Var b) {
  const auto &va = value(a), &vb = value(b);
  if (va.rows() != vb.rows()) throw Error("Tape::concat_cols: row mismatch");
  RowMatrix y(va.rows(), va.cols() + vb.cols());
  y.leftCols(va.cols()) = va;
  y.rightCols(vb.cols()) = vb;
  const Eigen::Index ka = va.cols(), kb = vb.cols();
  return push(std::move(y), needs(a) || needs(b), [this, a, b, ka, kb, id = nodes_.size()] {
    const RowMatrix& g = nodes_[id].grad;
    if (needs(a)) grad(a.id) += g.leftCols(ka);
    if (needs(b)) grad(b.id) += g.rightCols(kb);
  });
}

Var Tape::slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > value(x).cols()) {
    throw Error("Tape::slice_cols: range out of bounds");
  }
  RowMatrix y = value(x).middleCols(start, count);
  return push(std::move(y), needs(x), [this, x, start, count, id = nodes_.size()] {
    grad(x.id).middleCols(start, count) += nodes_[id].grad;
  });
}

Var Tape::gather_rows(Var x, const std::vector<Eigen::Index>& rows) {
  const auto& vx = value(x);
  RowMatrix y(static_cast<Eigen::Index>(rows.size()), vx.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= vx.rows()) throw Error("Tape::gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(i)) = vx.row(rows[i]);
  }
  return push(std::move(y), needs(x), [this, x, rows, id = nodes_.size()] {
    const RowMatrix& g = nodes_[id].grad;
    RowMatrix& gx = grad(x.id);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var Tape::batch_norm(Var x, Var gamma, Var beta, bool training, const RunningMoments& moments) {
  const RowMatrix& vx = value(x);
  const Eigen::Index n = vx.rows(), k = vx.cols();
  if (value(gamma).cols() != k || value(beta).cols() != k) {
    throw Error("Tape::batch_norm: shape mismatch");
  }
  if (n == 0) throw Error("Tape::batch_norm: empty batch");
  Eigen::RowVectorXd mean, inv_std;
  if (training) {
    mean = vx.colwise().mean();
    const Eigen::RowVectorXd var = (vx.rowwise() - mean).array().square().colwise().mean();
    inv_std = (var.array() + moments.epsilon).rsqrt();
    if (moments.update_mean != nullptr) {
      Eigen::Map<Eigen::RowVectorXd> rm(moments.update_mean, k), rv(moments.update_var, k);
      rm = moments.momentum * rm + (1.0 - moments.momentum) * mean;
      if (n > 1) {
        const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
        rv = moments.momentum * rv + (1.0 - moments.momentum) * unbias * var;
      }
    }
  } else {
    mean = Eigen::Map<const Eigen::RowVectorXd>(moments.mean, k);
    inv_std = (Eigen::Map<const Eigen::RowVectorXd>(moments.var, k).array() + moments.epsilon).rsqrt();
  }
  RowMatrix xhat = (vx.rowwise() - mean).array().rowwise() * inv_std.array();
  RowMatrix y = xhat.array().rowwise() * value(gamma).row(0).array();
  y.rowwise() += value(beta).row(0);
  return push(std::move(y), needs(x) || needs(gamma) || needs(beta),
              [this, x, gamma, beta, training, xhat = std::move(xhat), inv_std, n,
               id = nodes_.size()] {
                const RowMatrix& g = nodes_[id].grad;
                if (needs(gamma)) grad(gamma.id) += (g.array() * xhat.array()).colwise().sum().matrix();
                if (needs(beta)) grad(beta.id) += g.colwise().sum();
                if (!needs(x)) return;
                const RowMatrix dxhat = g.array().rowwise() * value(gamma).row(0).array();
                if (!training) {
                  grad(x.id).array() += dxhat.array().rowwise() * inv_std.array();
                  return;
                }
                const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
                const Eigen::RowVectorXd sum_dx = (dxhat.array() * xhat.array()).colwise().sum();
                const double inv_n = 1.0 / static_cast<double>(n);
                RowMatrix dx = dxhat;
                dx.rowwise() -= sum_d * inv_n;
                dx.array() -= xhat.array().rowwise() * (sum_dx.array() * inv_n);
                grad(x.id).array() += dx.array().rowwise() * inv_std.array();
              });
}

}  // namespace csa
