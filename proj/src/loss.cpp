#include "csa/loss.h"

#include <cmath>
#include <numbers>

namespace csa {

namespace {

void check_common(const BatchDraws& b, const char* op) {
  if (b.size() == 0) throw Error(std::string(op) + ": empty batch");
  if (b.delta.size() != b.size() || b.a.size() != b.size()) {
    throw Error(std::string(op) + ": inconsistent batch lengths");
  }
}

void check_event(const BatchDraws& b, const char* op) {
  check_common(b, op);
  if (static_cast<std::size_t>(b.event.size()) != b.size()) {
    throw Error(std::string(op) + ": event samples missing");
  }
}

void check_censor(const BatchDraws& b, const char* op) {
  check_common(b, op);
  if (static_cast<std::size_t>(b.censor.size()) != b.size()) {
    throw Error(std::string(op) + ": censoring samples missing (CSA-INFO mode only)");
  }
}

double hinge(double v) { return v > 0.0 ? v : 0.0; }
double step(double v) { return v > 0.0 ? 1.0 : 0.0; }
double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

LossTerm empty_term(const BatchDraws& b) {
  LossTerm t;
  const auto n = static_cast<Eigen::Index>(b.size());
  t.d_event = Eigen::VectorXd::Zero(n);
  t.d_censor = Eigen::VectorXd::Zero(n);
  t.d_param_a = Eigen::VectorXd::Zero(n);
  t.d_param_b = Eigen::VectorXd::Zero(n);
  return t;
}

}  // namespace

LossTerm csa_factual_term(const BatchDraws& b) {
  check_event(b, "csa_factual_loss");
  LossTerm out = empty_term(b);
  const double inv_n = 1.0 / static_cast<double>(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double y = b.y[i], t = b.event[k];
    if (b.delta[i] == 1) {
      out.value += std::abs(y - t);
      out.d_event[k] = sign(t - y) * inv_n;
    } else {
      out.value += hinge(y - t);
      out.d_event[k] = -step(y - t) * inv_n;
    }
  }
  out.value *= inv_n;
  return out;
}

LossTerm censoring_term(const BatchDraws& b) {
  check_censor(b, "censoring_loss");
  LossTerm out = empty_term(b);
  const double inv_n = 1.0 / static_cast<double>(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double y = b.y[i], c = b.censor[k];
    if (b.delta[i] == 0) {
      out.value += std::abs(y - c);
      out.d_censor[k] = sign(c - y) * inv_n;
    } else {
      out.value += hinge(y - c);
      out.d_censor[k] = -step(y - c) * inv_n;
    }
  }
  out.value *= inv_n;
  return out;
}

LossTerm time_order_term(const BatchDraws& b) {
  check_event(b, "time_order_loss");
  check_censor(b, "time_order_loss");
  LossTerm out = empty_term(b);
  const double inv_n = 1.0 / static_cast<double>(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double t = b.event[k], c = b.censor[k];
    if (b.delta[i] == 1) {
      out.value += hinge(t - c);
      out.d_event[k] = step(t - c) * inv_n;
      out.d_censor[k] = -step(t - c) * inv_n;
    } else {
      out.value += hinge(c - t);
      out.d_event[k] = -step(c - t) * inv_n;
      out.d_censor[k] = step(c - t) * inv_n;
    }
  }
  out.value *= inv_n;
  return out;
}

double log_normal_tail(double z) {
  if (z < 35.0) return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
  const double z2 = z * z;
  return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

AftPoint aft_point(double y, int delta, double a, double b, AftFamily family) {
  if (!(y > 0.0)) throw Error("aft_nll: observed time must be positive");
  if (!(b > 0.0)) {
    throw Error(family == AftFamily::kLogNormal ? "aft_nll: sigma must be positive"
                                                : "aft_nll: shape k must be positive");
  }
  AftPoint p;
  const double log_y = std::log(y);
  if (family == AftFamily::kLogNormal) {
    const double mu = a, sigma = b;
    const double z = (log_y - mu) / sigma;
    if (delta == 1) {
      p.nll = log_y + std::log(sigma) + 0.5 * std::log(2.0 * std::numbers::pi) + 0.5 * z * z;
      p.d_a = -z / sigma;
      p.d_b = 1.0 / sigma - z * z / sigma;
    } else {
      const double log_q = log_normal_tail(z);
      const double log_phi = -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
      const double h = std::exp(log_phi - log_q);
      p.nll = -log_q;
      p.d_a = -h / sigma;
      p.d_b = -h * z / sigma;
    }
    return p;
  }
  const double lambda = a, k = b;
  if (!(lambda > 0.0)) throw Error("aft_nll: Weibull scale must be positive");
  const double log_ratio = log_y - std::log(lambda);
  const double u = std::exp(k * log_ratio);
  if (delta == 1) {
    p.nll = -std::log(k) + k * std::log(lambda) - (k - 1.0) * log_y + u;
    p.d_a = (k / lambda) * (1.0 - u);
    p.d_b = -1.0 / k - log_ratio + u * log_ratio;
  } else {
    p.nll = u;
    p.d_a = -k * u / lambda;
    p.d_b = u * log_ratio;
  }
  return p;
}

LossTerm aft_nll_term(const BatchDraws& b, AftFamily family) {
  check_common(b, "aft_nll");
  if (static_cast<std::size_t>(b.param_a.size()) != b.size() ||
      static_cast<std::size_t>(b.param_b.size()) != b.size()) {
    throw Error("aft_nll: distribution parameters missing");
  }
  LossTerm out = empty_term(b);
  const double inv_n = 1.0 / static_cast<double>(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const AftPoint p = aft_point(b.y[i], b.delta[i], b.param_a[k], b.param_b[k], family);
    out.value += p.nll;
    out.d_param_a[k] = p.d_a * inv_n;
    out.d_param_b[k] = p.d_b * inv_n;
  }
  out.value *= inv_n;
  return out;
}

double csa_factual_loss(const BatchDraws& b) { return csa_factual_term(b).value; }
double censoring_loss(const BatchDraws& b) { return censoring_term(b).value; }
double time_order_loss(const BatchDraws& b) { return time_order_term(b).value; }
double csa_info_loss(const BatchDraws& b) {
  return csa_factual_loss(b) + censoring_loss(b) + time_order_loss(b);
}
double aft_nll(const BatchDraws& b, AftFamily family) { return aft_nll_term(b, family).value; }
double sr_loss(const BatchDraws& b) { return csa_factual_loss(b); }

namespace {

BatchDraws subset(const BatchDraws& b, const std::vector<std::size_t>& rows) {
  BatchDraws s;
  const auto take = [&](const Eigen::VectorXd& v) {
    if (v.size() == 0) return Eigen::VectorXd();
    Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[static_cast<Eigen::Index>(rows[i])];
    return out;
  };
  for (std::size_t r : rows) {
    s.y.push_back(b.y[r]);
    s.delta.push_back(b.delta[r]);
    s.a.push_back(b.a[r]);
  }
  s.event = take(b.event);
  s.censor = take(b.censor);
  s.param_a = take(b.param_a);
  s.param_b = take(b.param_b);
  return s;
}

void scatter_add(Eigen::VectorXd& dst, const Eigen::VectorXd& src,
                 const std::vector<std::size_t>& rows, double w) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    dst[static_cast<Eigen::Index>(rows[i])] += w * src[static_cast<Eigen::Index>(i)];
  }
}

}  // namespace

Objective total_objective(const BatchDraws& b, Mode mode, const ObjectiveOptions& opt) {
  check_common(b, "total_objective");
  if (!(opt.alpha >= 0.0)) throw Error("total_objective: alpha must be nonnegative");
  Objective out;
  out.grad = empty_term(b);
  const auto n = static_cast<Eigen::Index>(b.size());

  std::array<std::vector<std::size_t>, 2> rows;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.a[i] != 0 && b.a[i] != 1) throw Error("total_objective: arm labels must be 0 or 1");
    rows[static_cast<std::size_t>(b.a[i])].push_back(i);
  }

  double total = 0.0;
  for (int arm = 0; arm < 2; ++arm) {
    const auto& idx = rows[static_cast<std::size_t>(arm)];
    if (idx.empty()) continue;
    const BatchDraws s = subset(b, idx);
    switch (mode) {
      case Mode::kCsa:
      case Mode::kSr: {
        const LossTerm f = csa_factual_term(s);
        out.factual[static_cast<std::size_t>(arm)] = f.value;
        total += f.value;
        scatter_add(out.grad.d_event, f.d_event, idx, 1.0);
        break;
      }
      case Mode::kCsaInfo: {
        const LossTerm f = csa_factual_term(s);
        const LossTerm c = censoring_term(s);
        const LossTerm o = time_order_term(s);
        out.factual[static_cast<std::size_t>(arm)] = f.value;
        out.censoring += c.value;
        out.time_order += o.value;
        total += f.value + opt.censoring_weight * c.value + opt.time_order_weight * o.value;
        scatter_add(out.grad.d_event, f.d_event, idx, 1.0);
        scatter_add(out.grad.d_censor, c.d_censor, idx, opt.censoring_weight);
        scatter_add(out.grad.d_event, o.d_event, idx, opt.time_order_weight);
        scatter_add(out.grad.d_censor, o.d_censor, idx, opt.time_order_weight);
        break;
      }
      case Mode::kAftLogNormal:
      case Mode::kAftWeibull: {
        const LossTerm f = aft_nll_term(
            s, mode == Mode::kAftLogNormal ? AftFamily::kLogNormal : AftFamily::kWeibull);
        out.factual[static_cast<std::size_t>(arm)] = f.value;
        total += f.value;
        scatter_add(out.grad.d_param_a, f.d_param_a, idx, 1.0);
        scatter_add(out.grad.d_param_b, f.d_param_b, idx, 1.0);
        break;
      }
    }
  }

  out.d_latent = RowMatrix::Zero(n, b.latent.cols());
  if (opt.compute_ipm) {
    if (b.latent.rows() != n) throw Error("total_objective: latent rows missing");
    RowMatrix treated(static_cast<Eigen::Index>(rows[1].size()), b.latent.cols());
    RowMatrix control(static_cast<Eigen::Index>(rows[0].size()), b.latent.cols());
    for (std::size_t i = 0; i < rows[1].size(); ++i) treated.row(static_cast<Eigen::Index>(i)) = b.latent.row(static_cast<Eigen::Index>(rows[1][i]));
    for (std::size_t i = 0; i < rows[0].size(); ++i) control.row(static_cast<Eigen::Index>(i)) = b.latent.row(static_cast<Eigen::Index>(rows[0][i]));
    const IpmResult ipm = sinkhorn_ipm(treated, control, opt.ipm);
    out.ipm = ipm.value;
    out.ipm_empty_group = ipm.empty_group;
    out.ipm_converged = ipm.converged;
    total += opt.alpha * ipm.value;
    if (!ipm.empty_group) {
      for (std::size_t i = 0; i < rows[1].size(); ++i) out.d_latent.row(static_cast<Eigen::Index>(rows[1][i])) = opt.alpha * ipm.grad_x.row(static_cast<Eigen::Index>(i));
      for (std::size_t i = 0; i < rows[0].size(); ++i) out.d_latent.row(static_cast<Eigen::Index>(rows[0][i])) = opt.alpha * ipm.grad_y.row(static_cast<Eigen::Index>(i));
    }
  }
  out.total = total;
  return out;
}

double weighted_factual(const Objective& objective, const BatchDraws& batch) {
  double treated = 0.0;
  for (int a : batch.a) treated += a;
  const double u = batch.a.empty() ? 0.0 : treated / static_cast<double>(batch.a.size());
  return u * objective.factual[1] + (1.0 - u) * objective.factual[0];
}

}  // namespace csa
