#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "csa/simulate.h"
#include "helpers.h"

using namespace csa;

namespace {

SimConfig tiny_config() {
  SimConfig c;
  c.covariates = {{"x1", CovariateMarginal::Family::kGaussian, 0.0, 1.0},
                  {"x2", CovariateMarginal::Family::kBernoulli, 0.5, 1.0}};
  c.beta[0] = Eigen::VectorXd::Zero(2);
  c.beta[1] = Eigen::VectorXd::Zero(2);
  c.lambda[0] = c.lambda[1] = 1.0;
  c.alpha[0] = c.alpha[1] = 0.0;
  c.a_off = 0.1;
  c.b_scale = 1.25;
  c.eta = 1.0;
  c.mu_c = 0.0;
  c.sigma_c = 1.0;
  c.confounders = {0};
  c.n = 200;
  c.seed = 4;
  return c;
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_SUITE("simulate") {

TEST_CASE("covariates are deterministic per seed and row") {
  const auto m = SimConfig::actg_synthetic().covariates;
  const auto a = simulate_covariates(5, m, 9);
  CHECK(a == simulate_covariates(5, m, 9));
  CHECK(a != simulate_covariates(5, m, 10));
  // Row i depends only on (seed, i).
  CHECK(a.topRows(5) == simulate_covariates(8, m, 9).topRows(5));
}

TEST_CASE("covariate marginals") {
  std::vector<CovariateMarginal> m{{"g", CovariateMarginal::Family::kGaussian, 50.0, 10.0},
                                   {"b", CovariateMarginal::Family::kBernoulli, 1.0, 1.0}};
  const auto x = simulate_covariates(100000, m, 1);
  CHECK(std::abs(x.col(0).mean() - 50.0) < 0.2);
  CHECK((x.col(1).array() == 1.0).all());
  CHECK_THROWS_AS(simulate_covariates(0, m, 1), Error);
  CHECK_THROWS_AS(simulate_covariates(3, {m[0]}, 1), Error);
}

TEST_CASE("propensity values and monotonicity") {
  SimConfig c = tiny_config();
  const Eigen::VectorXd mu = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  CHECK(propensity(x, c, mu) == doctest::Approx((c.a_off + 0.5) / c.b_scale));
  x[0] = 1e3;
  CHECK(propensity(x, c, mu) == doctest::Approx((c.a_off + 1.0) / c.b_scale));
  double prev = 0.0;
  for (double v = -5; v <= 5; v += 0.5) {
    x[0] = v;
    const double e = propensity(x, c, mu);
    CHECK(e >= prev);
    prev = e;
  }
  c.eta = 0.0;
  x[0] = 7.0;
  CHECK(propensity(x, c, mu) == doctest::Approx((c.a_off + 0.5) / c.b_scale));
}

TEST_CASE("overlap violation is rejected") {
  SimConfig c = tiny_config();
  c.a_off = 0.6;
  c.b_scale = 1.2;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("propensity"), Error);
  CHECK_THROWS_AS(assemble_cohort(c), Error);
}

TEST_CASE("inverse CDF endpoints and exponential limit") {
  SimConfig c = tiny_config();
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  c.alpha[0] = 0.3;
  CHECK(*sample_gompertz_cox(x, 0, 1.0, c) == 0.0);
  CHECK_THROWS_AS(sample_gompertz_cox(x, 0, 0.0, c), Error);

  c.alpha[0] = 1e-9;
  Rng rng(6);
  std::vector<double> draws, reference;
  for (int i = 0; i < 100000; ++i) {
    draws.push_back(*sample_gompertz_cox(x, 0, rng.uniform_open_low(), c));
    reference.push_back(-std::log(rng.uniform_open_low()));
  }
  CHECK(ks(draws, reference) < 0.01);
}

TEST_CASE("negative shape rejects and redraws") {
  SimConfig c = tiny_config();
  c.alpha[0] = c.alpha[1] = -0.5;
  c.n = 2000;
  const auto cohort = assemble_cohort(c);
  CHECK(cohort.rejected_draws > 0);
  for (const auto& h : cohort.hidden) {
    CHECK(std::isfinite(h.t0));
    CHECK(h.t0 > 0.0);
    CHECK(h.t1 > 0.0);
  }
}

TEST_CASE("default scenario rates") {
  const auto c = SimConfig::actg_synthetic();
  const auto cohort = assemble_cohort(c);
  CHECK(std::abs(cohort.event_rate() - 0.489) <= 0.03);
  CHECK(std::abs(cohort.treated_rate() - 0.559) <= 0.03);
}

TEST_CASE("censoring extremes") {
  SimConfig c = tiny_config();
  c.mu_c = 50.0;
  c.sigma_c = 1e-6;
  auto cohort = assemble_cohort(c);
  CHECK(cohort.event_rate() == 1.0);
  c.mu_c = -50.0;
  cohort = assemble_cohort(c);
  CHECK(cohort.event_rate() == 0.0);
}

TEST_CASE("observed outcome is consistent with the potential outcomes") {
  const auto cohort = assemble_cohort(SimConfig::actg_synthetic(), 500);
  const auto& o = cohort.data.outcomes;
  for (std::size_t i = 0; i < o.size(); ++i) {
    const auto& h = cohort.hidden[i];
    const double ta = o.a[i] == 1 ? h.t1 : h.t0;
    CHECK(o.y[i] == std::min(ta, h.c));
    CHECK(o.delta[i] == (ta < h.c ? 1 : 0));
    CHECK(h.propensity > 0.0);
    CHECK(h.propensity < 1.0);
  }
}

TEST_CASE("fresh assignment keeps outcome distributions within strata") {
  SimConfig c = SimConfig::actg_synthetic();
  c.n = 100000;
  const auto a = assemble_cohort(c);
  c.assignment_seed = 777;
  const auto b = assemble_cohort(c);
  const auto col = static_cast<Eigen::Index>(c.confounders.front());
  const double cut = a.x.col(col).mean();
  for (int stratum = 0; stratum < 2; ++stratum) {
    std::vector<double> ya, yb;
    for (std::size_t i = 0; i < c.n; ++i) {
      const bool hi = a.x(static_cast<Eigen::Index>(i), col) > cut;
      if (hi != (stratum == 1)) continue;
      ya.push_back(a.data.outcomes.y[i]);
      yb.push_back(b.data.outcomes.y[i]);
    }
    // Same (t0, t1, c); arms redrawn from the same propensity.
    CHECK(ks(ya, yb) < 0.02);
  }
  CHECK(a.data.outcomes.a != b.data.outcomes.a);
}

TEST_CASE("cohort output is byte-identical for a fixed seed") {
  const auto c = SimConfig::actg_synthetic();
  const auto a = assemble_cohort(c, 300), b = assemble_cohort(c, 300);
  CHECK(cohort_csv(a) == cohort_csv(b));
  CHECK(hidden_csv(a) == hidden_csv(b));
}

TEST_CASE("CSV round trip through the loader") {
  const auto dir = test::scratch_dir("sim_roundtrip");
  SimConfig c = SimConfig::actg_synthetic();
  const auto cohort = assemble_cohort(c, 400);
  test::write_text(dir / "cohort.csv", cohort_csv(cohort));
  test::write_text(dir / "hidden.csv", hidden_csv(cohort));
  const auto raw = load_csv(dir / "cohort.csv", cohort_schema(c), {});
  REQUIRE(raw.size() == 400);
  CHECK(raw.outcomes.y == cohort.data.outcomes.y);
  CHECK(raw.outcomes.delta == cohort.data.outcomes.delta);
  CHECK(raw.outcomes.a == cohort.data.outcomes.a);
  CHECK(raw.missing_count() == cohort.data.missing_count());
  for (std::size_t k = 0; k < c.p(); ++k) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!raw.columns[k].missing[i]) CHECK(raw.columns[k].numeric[i] == cohort.x(i, k));
    }
  }
  const auto hidden = load_hidden_csv(dir / "hidden.csv");
  REQUIRE(hidden.size() == 400);
  for (std::size_t i = 0; i < 400; ++i) {
    CHECK(hidden[i].t0 == cohort.hidden[i].t0);
    CHECK(hidden[i].t1 == cohort.hidden[i].t1);
    CHECK(hidden[i].c == cohort.hidden[i].c);
    CHECK(hidden[i].propensity == cohort.hidden[i].propensity);
  }
}

TEST_CASE("missing cells are masked at the configured rate") {
  SimConfig c = SimConfig::actg_synthetic();
  c.missing_rate = 0.1;
  const auto cohort = assemble_cohort(c, 2000);
  const double rate = static_cast<double>(cohort.data.missing_count()) / (2000.0 * c.p());
  CHECK(std::abs(rate - 0.1) < 0.01);
}

TEST_CASE("configuration JSON round trip") {
  SimConfig c = SimConfig::actg_synthetic();
  c.assignment_seed = 12;
  const auto back = SimConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(cohort_csv(assemble_cohort(back, 50)) == cohort_csv(assemble_cohort(c, 50)));
}

}
