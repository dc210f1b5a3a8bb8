#include "csa/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "csa/io.h"
#include "csa/random.h"

namespace csa {

void EventTimeSamples::validate() const {
  if (arm[0].rows() == 0 || arm[0].cols() == 0) throw Error("event-time samples are empty");
  if (arm[0].rows() != arm[1].rows() || arm[0].cols() != arm[1].cols()) {
    throw Error("event-time samples: arm shapes differ");
  }
  for (const auto& m : arm) {
    if (!m.allFinite() || (m.array() <= 0.0).any()) {
      throw Error("event-time samples must be positive and finite");
    }
  }
}

EventTimeSamples EventTimeSamples::rows(const std::vector<std::size_t>& subjects) const {
  EventTimeSamples out;
  for (int a = 0; a < 2; ++a) {
    out.arm[a].resize(static_cast<Eigen::Index>(subjects.size()), arm[a].cols());
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      if (subjects[i] >= this->subjects()) throw Error("event-time samples: subject out of range");
      out.arm[a].row(static_cast<Eigen::Index>(i)) = arm[a].row(static_cast<Eigen::Index>(subjects[i]));
    }
  }
  return out;
}

double SurvivalCurve::at(double t) const {
  const auto it = std::upper_bound(time.begin(), time.end(), t);
  if (it == time.begin()) return 1.0;
  return survival[static_cast<std::size_t>(it - time.begin()) - 1];
}

bool SurvivalCurve::valid() const {
  if (time.empty() || time.size() != survival.size()) return false;
  if (survival[0] != 1.0) return false;
  for (std::size_t i = 0; i < time.size(); ++i) {
    if (!(survival[i] >= 0.0 && survival[i] <= 1.0)) return false;
    if (i > 0 && (!(time[i] > time[i - 1]) || survival[i] > survival[i - 1])) return false;
  }
  return true;
}

namespace {

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (n % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

// Linear-interpolated quantile of sorted values.
double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) throw Error("quantile of an empty set");
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void check_observed(std::span<const double> y, std::span<const int> delta) {
  if (y.size() != delta.size()) throw Error("observed times and indicators differ in length");
  for (double t : y) {
    if (!std::isfinite(t)) throw Error("observed times must be finite");
  }
  for (int d : delta) {
    if (d != 0 && d != 1) throw Error("event indicators must be 0 or 1");
  }
}

double slope(const std::vector<double>& t, const std::vector<double>& s) {
  const double n = static_cast<double>(t.size());
  const double mt = std::accumulate(t.begin(), t.end(), 0.0) / n;
  const double ms = std::accumulate(s.begin(), s.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sxy += (t[i] - mt) * (s[i] - ms);
    sxx += (t[i] - mt) * (t[i] - mt);
  }
  if (sxx <= 0.0) throw Error("fit window has a single time point");
  return sxy / sxx;
}

// Grid positions (excluding the leading zero) in the fit window: both
// curves inside the band, else either inside with both positive.
std::vector<std::size_t> fit_window(const std::vector<double>& s0, const std::vector<double>& s1,
                                    double lo, double hi) {
  std::vector<std::size_t> both, any;
  const auto inside = [&](double s) { return s >= lo && s <= hi; };
  for (std::size_t k = 1; k < s0.size(); ++k) {
    if (inside(s0[k]) && inside(s1[k])) both.push_back(k);
    if ((inside(s0[k]) || inside(s1[k])) && s0[k] > 0.0 && s1[k] > 0.0) any.push_back(k);
  }
  if (both.size() >= 2) return both;
  if (any.size() >= 2) return any;
  throw Error("fit window holds fewer than two grid points");
}

}  // namespace

Eigen::VectorXd row_medians(const RowMatrix& draws) {
  Eigen::VectorXd out(draws.rows());
  std::vector<double> buf(static_cast<std::size_t>(draws.cols()));
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    for (Eigen::Index s = 0; s < draws.cols(); ++s) buf[static_cast<std::size_t>(s)] = draws(i, s);
    out[i] = median_of(buf);
  }
  return out;
}

Eigen::VectorXd row_means(const RowMatrix& draws) { return draws.rowwise().mean(); }

std::vector<double> distinct_times(std::span<const double> y) {
  std::vector<double> t(y.begin(), y.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

SurvivalCurve km_curve(std::span<const double> y, std::span<const int> delta) {
  check_observed(y, delta);
  if (y.empty()) throw Error("km_curve: empty cohort");
  std::vector<std::size_t> order(y.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });
  SurvivalCurve c{{0.0}, {1.0}};
  double s = 1.0;
  std::size_t at_risk = y.size();
  for (std::size_t i = 0; i < order.size();) {
    const double t = y[order[i]];
    std::size_t events = 0, leaving = 0;
    for (; i < order.size() && y[order[i]] == t; ++i, ++leaving) events += delta[order[i]];
    s *= 1.0 - static_cast<double>(events) / static_cast<double>(at_risk);
    at_risk -= leaving;
    if (t == 0.0) {
      c.survival[0] = s;
    } else {
      c.time.push_back(t);
      c.survival.push_back(s);
    }
  }
  return c;
}

SurvivalCurve pkm_from_summaries(std::span<const double> summary, std::span<const int> delta,
                                 std::span<const double> grid) {
  if (summary.empty()) throw Error("pkm_curve: empty cohort");
  if (summary.size() != delta.size()) throw Error("pkm_curve: summaries and indicators differ in length");
  if (grid.empty() || !(grid[0] > 0.0)) throw Error("pkm_curve: grid must be nonempty and positive");
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) throw Error("pkm_curve: grid must be strictly increasing");
  }
  const std::size_t J = grid.size();
  std::vector<std::size_t> deaths(J, 0), before(J + 1, 0);
  for (std::size_t i = 0; i < summary.size(); ++i) {
    const double g = summary[i];
    // First grid index with grid[k] > g.
    const auto up = static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), g) - grid.begin());
    // Subjects count as "before grid[k]" for every k with grid[k] > g.
    if (up < J) ++before[up];
    if (delta[i] != 1) continue;
    if (up == 0) {
      ++deaths[0];
    } else if (up < J) {
      ++deaths[up - 1];
    } else if (g == grid[J - 1]) {
      ++deaths[J - 1];
    }
  }
  SurvivalCurve c{{0.0}, {1.0}};
  double s = 1.0;
  std::size_t gone = 0;
  const std::size_t n = summary.size();
  for (std::size_t k = 0; k < J; ++k) {
    gone += before[k];
    // Summaries before the first grid time still start in the risk set.
    const std::size_t at_risk = n - (k == 0 ? 0 : gone);
    if (at_risk > 0) s *= 1.0 - static_cast<double>(std::min(deaths[k], at_risk)) / static_cast<double>(at_risk);
    c.time.push_back(grid[k]);
    c.survival.push_back(s);
  }
  return c;
}

SurvivalCurve pkm_curve(const RowMatrix& draws, std::span<const double> y,
                        std::span<const int> delta) {
  check_observed(y, delta);
  if (static_cast<std::size_t>(draws.rows()) != y.size()) throw Error("pkm_curve: draw rows differ from cohort size");
  const Eigen::VectorXd med = row_medians(draws);
  const auto grid = distinct_times(y);
  return pkm_from_summaries(std::span<const double>(med.data(), static_cast<std::size_t>(med.size())), delta, grid);
}

HazardRatioEstimate hazard_ratio_from_curves(const SurvivalCurve& control,
                                             const SurvivalCurve& treated,
                                             const HrOptions& options) {
  if (control.time != treated.time) throw Error("hazard ratio: curves are on different grids");
  const auto window = fit_window(control.survival, treated.survival, options.window_low, options.window_high);
  HazardRatioEstimate h;
  std::vector<double> t, s0, s1;
  for (std::size_t k : window) {
    t.push_back(control.time[k]);
    s0.push_back(control.survival[k]);
    s1.push_back(treated.survival[k]);
  }
  h.slope[0] = slope(t, s0);
  h.slope[1] = slope(t, s1);
  if (h.slope[0] == 0.0) throw Error("degenerate control survival");
  if (h.slope[1] == 0.0) throw Error("degenerate treated survival");
  const double ratio = h.slope[1] / h.slope[0];
  h.time = t;
  for (std::size_t i = 0; i < t.size(); ++i) h.hr.push_back(s0[i] / s1[i] * ratio);
  h.point = median_of(h.hr);
  h.point_ci_low = h.point_ci_high = h.point;
  h.ci_low = h.ci_high = h.hr;
  h.curve[0] = control;
  h.curve[1] = treated;
  return h;
}

HazardRatioEstimate nonparam_hr_from_summaries(std::span<const double> control,
                                               std::span<const double> treated,
                                               std::span<const double> y,
                                               std::span<const int> delta,
                                               const HrOptions& options) {
  check_observed(y, delta);
  if (control.size() != y.size() || treated.size() != y.size()) {
    throw Error("nonparam_hr: summaries differ from cohort size");
  }
  if (!(options.level > 0.0 && options.level < 1.0)) throw Error("nonparam_hr: level must lie in (0,1)");
  const auto grid = distinct_times(y);
  HazardRatioEstimate h = hazard_ratio_from_curves(pkm_from_summaries(control, delta, grid),
                                                   pkm_from_summaries(treated, delta, grid), options);
  if (options.bootstrap == 0) return h;

  const std::size_t n = y.size();
  std::vector<double> points;
  std::vector<std::vector<double>> per_time(h.time.size());
  std::vector<double> b0(n), b1(n);
  std::vector<int> bd(n);
  for (std::size_t b = 0; b < options.bootstrap; ++b) {
    Rng rng = Rng::substream(options.seed, 0xB007, b);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = rng.below(n);
      b0[i] = control[j];
      b1[i] = treated[j];
      bd[i] = delta[j];
    }
    try {
      const SurvivalCurve c0 = pkm_from_summaries(b0, bd, grid), c1 = pkm_from_summaries(b1, bd, grid);
      const HazardRatioEstimate r = hazard_ratio_from_curves(c0, c1, options);
      points.push_back(r.point);
      const double ratio = r.slope[1] / r.slope[0];
      for (std::size_t k = 0; k < h.time.size(); ++k) {
        const double s0 = c0.at(h.time[k]), s1 = c1.at(h.time[k]);
        if (s1 > 0.0) per_time[k].push_back(s0 / s1 * ratio);
      }
    } catch (const Error&) {
      ++h.bootstrap_failed;
    }
  }
  h.bootstrap_used = points.size();
  if (points.empty()) throw Error("nonparam_hr: every bootstrap resample was degenerate");
  const double lo = 0.5 * (1.0 - options.level), hi = 1.0 - lo;
  std::sort(points.begin(), points.end());
  h.point_ci_low = std::min(quantile_sorted(points, lo), h.point);
  h.point_ci_high = std::max(quantile_sorted(points, hi), h.point);
  for (std::size_t k = 0; k < h.time.size(); ++k) {
    auto& v = per_time[k];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    h.ci_low[k] = std::min(quantile_sorted(v, lo), h.hr[k]);
    h.ci_high[k] = std::max(quantile_sorted(v, hi), h.hr[k]);
  }
  return h;
}

HazardRatioEstimate nonparam_hr(const EventTimeSamples& samples, std::span<const double> y,
                                std::span<const int> delta, const HrOptions& options) {
  samples.validate();
  if (samples.subjects() != y.size()) throw Error("nonparam_hr: samples differ from cohort size");
  const Eigen::VectorXd m0 = row_medians(samples.arm[0]), m1 = row_medians(samples.arm[1]);
  return nonparam_hr_from_summaries(std::span<const double>(m0.data(), y.size()),
                                    std::span<const double>(m1.data(), y.size()), y, delta, options);
}

double silverman_bandwidth(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw Error("kernel density needs at least two draws");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const double iqr = quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  if (!(spread > 0.0)) throw Error("degenerate kernel density: draws have zero variance");
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

std::vector<double> quantile_grid(std::span<const double> y, std::size_t count) {
  if (y.empty() || count < 2) throw Error("quantile_grid: need data and at least two points");
  std::vector<double> v(y.begin(), y.end());
  std::sort(v.begin(), v.end());
  const double lo = quantile_sorted(v, 0.05), hi = quantile_sorted(v, 0.95);
  if (!(hi > lo)) throw Error("quantile_grid: observed times have no spread");
  std::vector<double> g(count);
  for (std::size_t k = 0; k < count; ++k) {
    g[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  }
  return g;
}

ConditionalHr conditional_hr(const EventTimeSamples& samples, std::span<const double> grid,
                             const ConditionalHrOptions& options) {
  samples.validate();
  if (samples.draws() < options.min_draws) {
    throw Error("conditional_hr: needs at least " + std::to_string(options.min_draws) + " draws per arm");
  }
  if (grid.size() < 2) throw Error("conditional_hr: grid needs at least two points");
  ConditionalHr out;
  out.grid.assign(grid.begin(), grid.end());
  const auto n = static_cast<Eigen::Index>(samples.subjects());
  const auto G = grid.size();
  out.hr.resize(n, static_cast<Eigen::Index>(G));
  // Leading zero point so the window logic matches the marginal estimator.
  std::vector<double> with_zero(G + 1, 0.0);
  std::copy(grid.begin(), grid.end(), with_zero.begin() + 1);
  std::vector<double> row(samples.draws());
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> s[2];
    for (int a = 0; a < 2; ++a) {
      for (std::size_t d = 0; d < row.size(); ++d) row[d] = samples.arm[a](i, static_cast<Eigen::Index>(d));
      const double h = silverman_bandwidth(row);
      s[a].assign(G + 1, 1.0);
      for (std::size_t k = 0; k < G; ++k) {
        double acc = 0.0;
        for (double x : row) acc += 0.5 * std::erfc((grid[k] - x) / (h * std::sqrt(2.0)));
        // Floor keeps the ratio finite where the smoothed tail underflows.
        s[a][k + 1] = std::max(acc / static_cast<double>(row.size()), 1e-300);
      }
    }
    const auto window = fit_window(s[0], s[1], options.window_low, options.window_high);
    std::vector<double> t, v0, v1;
    for (std::size_t k : window) {
      t.push_back(with_zero[k]);
      v0.push_back(s[0][k]);
      v1.push_back(s[1][k]);
    }
    const double m0 = slope(t, v0), m1 = slope(t, v1);
    if (m0 == 0.0 || m1 == 0.0) throw Error("degenerate control survival");
    for (std::size_t k = 0; k < G; ++k) out.hr(i, static_cast<Eigen::Index>(k)) = s[0][k + 1] / s[1][k + 1] * (m1 / m0);
  }
  return out;
}

double c_index(std::span<const double> predicted, std::span<const double> y,
               std::span<const int> delta) {
  check_observed(y, delta);
  if (predicted.size() != y.size()) throw Error("c_index: predictions differ from cohort size");
  double concordant = 0.0;
  std::size_t comparable = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (delta[i] != 1) continue;
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (!(y[i] < y[j])) continue;
      ++comparable;
      if (predicted[i] < predicted[j]) {
        concordant += 1.0;
      } else if (predicted[i] == predicted[j]) {
        concordant += 0.5;
      }
    }
  }
  if (comparable == 0) throw Error("c_index: no comparable pairs");
  return concordant / static_cast<double>(comparable);
}

double calibration_slope(const RowMatrix& draws, std::span<const double> y,
                         std::span<const int> delta) {
  const SurvivalCurve model = pkm_curve(draws, y, delta);
  const SurvivalCurve data = km_curve(y, delta);
  std::vector<double> events;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (delta[i] == 1) events.push_back(y[i]);
  }
  events = distinct_times(events);
  if (events.size() < 2) throw Error("calibration_slope: fewer than two event times");
  std::vector<double> km, pkm;
  for (double t : events) {
    km.push_back(data.at(t));
    pkm.push_back(model.at(t));
  }
  const double n = static_cast<double>(km.size());
  const double mk = std::accumulate(km.begin(), km.end(), 0.0) / n;
  const double mp = std::accumulate(pkm.begin(), pkm.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < km.size(); ++i) {
    sxy += (km[i] - mk) * (pkm[i] - mp);
    sxx += (km[i] - mk) * (km[i] - mk);
  }
  if (sxx <= 0.0) throw Error("calibration_slope: data survival is constant at the event times");
  return sxy / sxx;
}

double mean_cov(const RowMatrix& draws) {
  if (draws.rows() == 0) throw Error("mean_cov: no subjects");
  if (draws.cols() < 2) throw Error("mean_cov: needs at least two draws per subject");
  double total = 0.0;
  const double s = static_cast<double>(draws.cols());
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    const double mean = draws.row(i).mean();
    const double var = (draws.row(i).array() - mean).square().sum() / (s - 1.0);
    total += std::sqrt(var) / mean;
  }
  return total / static_cast<double>(draws.rows());
}

RowMatrix factual_draws(const EventTimeSamples& samples, std::span<const int> arms) {
  if (arms.size() != samples.subjects()) throw Error("factual_draws: arms differ from cohort size");
  RowMatrix out(samples.arm[0].rows(), samples.arm[0].cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    out.row(i) = samples.arm[arms[static_cast<std::size_t>(i)] == 1 ? 1 : 0].row(i);
  }
  return out;
}

Eigen::VectorXd ite_expected_lifetime(const EventTimeSamples& samples) {
  samples.validate();
  return row_means(samples.arm[1]) - row_means(samples.arm[0]);
}

namespace {
void check_ite(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  if (truth.size() == 0) throw Error("true individual effects are unavailable");
  if (predicted.size() != truth.size()) throw Error("predicted and true effects differ in length");
}
}  // namespace

double pehe(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  check_ite(predicted, truth);
  return std::sqrt((predicted - truth).squaredNorm() / static_cast<double>(truth.size()));
}

double ate_error(const Eigen::VectorXd& predicted, const Eigen::VectorXd& truth) {
  check_ite(predicted, truth);
  return std::abs(truth.mean() - predicted.mean());
}

}  // namespace csa
