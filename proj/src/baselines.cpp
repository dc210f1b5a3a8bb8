#include "csa/baselines.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "csa/io.h"

namespace csa {

namespace {

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + exp(z)) without overflow.
double log1p_exp(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void check_arms(std::span<const int> arms) {
  bool seen[2] = {false, false};
  for (int a : arms) {
    if (a != 0 && a != 1) throw Error("treatment indicators must be 0 or 1");
    seen[a] = true;
  }
  if (!seen[0] || !seen[1]) throw Error("both arms must be present");
}

struct LogisticEval {
  double objective = 0.0;  // mean negative log-likelihood plus penalty
  double loglik = 0.0;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

LogisticEval logistic_eval(const Eigen::MatrixXd& design, std::span<const int> arms,
                           const Eigen::VectorXd& coef, double ridge, bool derivatives) {
  const auto n = design.rows();
  const auto p = design.cols();
  const Eigen::VectorXd eta = design * coef;
  LogisticEval e;
  double nll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) nll += log1p_exp(eta[i]) - arms[static_cast<std::size_t>(i)] * eta[i];
  nll /= static_cast<double>(n);
  e.loglik = -nll;
  const double pen = 0.5 * ridge * coef.tail(p - 1).squaredNorm();
  e.objective = nll + pen;
  if (!derivatives) return e;
  Eigen::VectorXd resid(n), curv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = sigmoid(eta[i]);
    resid[i] = mu - arms[static_cast<std::size_t>(i)];
    curv[i] = mu * (1.0 - mu);
  }
  e.grad = design.transpose() * resid / static_cast<double>(n);
  e.hess = design.transpose() * curv.asDiagonal() * design / static_cast<double>(n);
  for (Eigen::Index k = 1; k < p; ++k) {
    e.grad[k] += ridge * coef[k];
    e.hess(k, k) += ridge;
  }
  return e;
}

}  // namespace

Eigen::VectorXd PropensityModel::predict(const RowMatrix& x) const {
  if (!fitted) throw Error("propensity model is not fitted");
  if (x.cols() != weights.size()) throw Error("propensity model: covariate count mismatch");
  Eigen::VectorXd eta = (x * weights).array() + intercept;
  return eta.unaryExpr([](double z) { return sigmoid(z); });
}

PropensityModel fit_logistic_propensity(const RowMatrix& x, std::span<const int> arms,
                                        const PropensityOptions& options) {
  if (static_cast<std::size_t>(x.rows()) != arms.size()) throw Error("propensity fit: length mismatch");
  check_arms(arms);
  if (!(options.ridge >= 0.0)) throw Error("propensity fit: ridge must be nonnegative");
  const auto n = x.rows(), p = x.cols() + 1;
  Eigen::MatrixXd design(n, p);
  design.col(0).setOnes();
  design.rightCols(p - 1) = x;

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p);
  const double treated = std::accumulate(arms.begin(), arms.end(), 0.0) / static_cast<double>(n);
  coef[0] = std::log(treated / (1.0 - treated));

  PropensityModel m;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    const LogisticEval e = logistic_eval(design, arms, coef, options.ridge, true);
    if (e.grad.lpNorm<Eigen::Infinity>() < options.tolerance) {
      m.converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(e.hess);
    Eigen::VectorXd step = ldlt.solve(e.grad);
    if (ldlt.info() != Eigen::Success || !step.allFinite()) {
      throw Error("propensity fit: singular Hessian (perfect separation?); try the ridge option");
    }
    // Halve the step until the objective does not increase.
    double scale = 1.0;
    Eigen::VectorXd trial = coef - step;
    while (logistic_eval(design, arms, trial, options.ridge, false).objective > e.objective && scale > 1e-10) {
      scale *= 0.5;
      trial = coef - scale * step;
    }
    coef = trial;
    m.iterations = it + 1;
  }
  if (!m.converged) {
    const LogisticEval e = logistic_eval(design, arms, coef, options.ridge, true);
    m.converged = e.grad.lpNorm<Eigen::Infinity>() < options.tolerance;
  }
  const Eigen::VectorXd eta = design * coef;
  // Diverging linear predictors mean an arm is (nearly) perfectly predicted.
  if (!coef.allFinite() || eta.cwiseAbs().maxCoeff() > 30.0) {
    throw Error("propensity fit: perfect separation detected (diverging weights); try the ridge option, e.g. 1e-4");
  }
  m.intercept = coef[0];
  m.weights = coef.tail(p - 1);
  m.fitted = true;
  m.log_likelihood = logistic_eval(design, arms, coef, 0.0, false).loglik;
  return m;
}

PropensityModel fit_logistic_propensity(const SurvivalDataset& data,
                                        const PropensityOptions& options) {
  return fit_logistic_propensity(data.x, data.outcomes.a, options);
}

const char* scheme_name(WeightScheme s) {
  switch (s) {
    case WeightScheme::kUniform: return "uniform";
    case WeightScheme::kIpw: return "ipw";
    case WeightScheme::kOw: return "ow";
  }
  return "?";
}

WeightScheme parse_scheme(const std::string& s) {
  if (s == "uniform") return WeightScheme::kUniform;
  if (s == "ipw") return WeightScheme::kIpw;
  if (s == "ow") return WeightScheme::kOw;
  throw Error("unknown weighting scheme '" + s + "' (expected uniform, ipw or ow)");
}

Eigen::VectorXd raw_weights(const Eigen::VectorXd& propensity, std::span<const int> arms,
                            WeightScheme scheme) {
  if (static_cast<std::size_t>(propensity.size()) != arms.size()) throw Error("weights: length mismatch");
  Eigen::VectorXd w(propensity.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double e = propensity[i];
    const int a = arms[static_cast<std::size_t>(i)];
    if (scheme != WeightScheme::kUniform && !(e > 0.0 && e < 1.0)) {
      throw Error("weights: propensity score of 0 or 1 violates overlap");
    }
    switch (scheme) {
      case WeightScheme::kUniform: w[i] = 1.0; break;
      case WeightScheme::kIpw: w[i] = a == 1 ? 1.0 / e : 1.0 / (1.0 - e); break;
      case WeightScheme::kOw: w[i] = a == 1 ? 1.0 - e : e; break;
    }
  }
  return w;
}

Eigen::VectorXd normalize_per_arm(const Eigen::VectorXd& weights, std::span<const int> arms) {
  double sum[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    const int a = arms[static_cast<std::size_t>(i)];
    sum[a] += weights[i];
    ++count[a];
  }
  Eigen::VectorXd out(weights.size());
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    const int a = arms[static_cast<std::size_t>(i)];
    if (!(sum[a] > 0.0)) throw Error("weights: an arm has zero total weight");
    out[i] = weights[i] * static_cast<double>(count[a]) / sum[a];
  }
  return out;
}

Eigen::VectorXd compute_weights(const PropensityModel& model, const SurvivalDataset& data,
                                WeightScheme scheme) {
  if (scheme == WeightScheme::kUniform) return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.size()));
  const Eigen::VectorXd e = model.predict(data.x);
  return normalize_per_arm(raw_weights(e, data.outcomes.a, scheme), data.outcomes.a);
}

namespace {

struct CoxEval {
  double loglik = 0.0;
  double score = 0.0;
  double information = 0.0;
};

struct CoxData {
  // Distinct times, descending, with the subjects observed at each.
  std::vector<std::vector<std::size_t>> groups;
};

CoxData group_times(std::span<const double> y) {
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });
  CoxData d;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i == 0 || y[order[i]] != y[order[i - 1]]) d.groups.emplace_back();
    d.groups.back().push_back(order[i]);
  }
  return d;
}

CoxEval cox_eval(double beta, const CoxData& d, std::span<const int> delta, std::span<const int> arms,
                 const Eigen::VectorXd& w) {
  CoxEval e;
  double s0 = 0.0, s1 = 0.0;
  const double eb = std::exp(beta);
  for (const auto& g : d.groups) {
    for (std::size_t j : g) {
      const double r = w[static_cast<Eigen::Index>(j)] * (arms[j] == 1 ? eb : 1.0);
      s0 += r;
      if (arms[j] == 1) s1 += r;
    }
    const double frac = s1 / s0;
    for (std::size_t i : g) {
      if (delta[i] != 1) continue;
      const double wi = w[static_cast<Eigen::Index>(i)];
      e.loglik += wi * (beta * arms[i] - std::log(s0));
      e.score += wi * (arms[i] - frac);
      e.information += wi * frac * (1.0 - frac);
    }
  }
  return e;
}

void check_cox_inputs(std::span<const double> y, std::span<const int> delta, std::span<const int> arms,
                      const Eigen::VectorXd& w) {
  if (y.size() != delta.size() || y.size() != arms.size() || static_cast<std::size_t>(w.size()) != y.size()) {
    throw Error("coxph: input lengths differ");
  }
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) throw Error("coxph: weights must be positive and finite");
  }
  for (int a : arms) {
    if (a != 0 && a != 1) throw Error("coxph: treatment indicators must be 0 or 1");
  }
}

}  // namespace

double weighted_partial_loglik(double beta, std::span<const double> y, std::span<const int> delta,
                               std::span<const int> arms, const Eigen::VectorXd& weights) {
  check_cox_inputs(y, delta, arms, weights);
  return cox_eval(beta, group_times(y), delta, arms, weights).loglik;
}

CoxModel fit_weighted_coxph(std::span<const double> y, std::span<const int> delta,
                            std::span<const int> arms, const Eigen::VectorXd& weights,
                            WeightScheme scheme) {
  check_cox_inputs(y, delta, arms, weights);
  if (std::find(delta.begin(), delta.end(), 1) == delta.end()) throw Error("coxph: no events");
  const CoxData d = group_times(y);
  CoxModel m;
  m.scheme = scheme;
  if (cox_eval(0.0, d, delta, arms, weights).information <= 0.0) {
    throw Error("coxph: no event has both arms in its risk set; the treatment effect is not identifiable");
  }
  double beta = 0.0;
  for (std::size_t it = 1; it <= 200; ++it) {
    const CoxEval e = cox_eval(beta, d, delta, arms, weights);
    if (!(e.information > 0.0)) throw Error("coxph: singular information (no finite maximum)");
    const double newton = e.score / e.information;
    const double step = std::clamp(newton, -1.0, 1.0);
    double next = beta + step;
    // Step halving keeps the likelihood from decreasing.
    while (cox_eval(next, d, delta, arms, weights).loglik < e.loglik && std::abs(next - beta) > 1e-14) {
      next = 0.5 * (beta + next);
    }
    m.iterations = it;
    const double moved = std::abs(next - beta);
    beta = next;
    if (std::abs(beta) > 50.0) throw Error("coxph: coefficient diverges (monotone likelihood)");
    // A vanishing score alone is not enough: on a monotone likelihood the
    // score decays while the Newton step stays large.
    if (std::abs(newton) < 1e-10 || (moved < 1e-12 && std::abs(newton) < 1e-6)) {
      m.converged = true;
      break;
    }
  }
  if (!m.converged) throw Error("coxph: Newton iterations did not converge within 200 steps");
  const CoxEval e = cox_eval(beta, d, delta, arms, weights);
  m.beta = beta;
  m.information = e.information;
  m.log_likelihood = e.loglik;
  return m;
}

CoxHazardRatio coxph_hr(const CoxModel& model) {
  if (!(model.information > 0.0) || !std::isfinite(model.information)) {
    throw Error("coxph: singular information; no standard error");
  }
  CoxHazardRatio h;
  h.se = 1.0 / std::sqrt(model.information);
  h.hr = std::exp(model.beta);
  h.ci_low = std::exp(model.beta - 1.96 * h.se);
  h.ci_high = std::exp(model.beta + 1.96 * h.se);
  return h;
}

}  // namespace csa
