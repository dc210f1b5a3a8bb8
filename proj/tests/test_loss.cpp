#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "csa/loss.h"
#include "helpers.h"

using namespace csa;

namespace {

BatchDraws single(double y, int delta, double t, double c = 1.0) {
  BatchDraws b;
  b.y = {y};
  b.delta = {delta};
  b.a = {0};
  b.event = Eigen::VectorXd::Constant(1, t);
  b.censor = Eigen::VectorXd::Constant(1, c);
  return b;
}

BatchDraws random_batch(Rng& rng, std::size_t n, Eigen::Index latent_dim = 3) {
  BatchDraws b;
  b.event.resize(static_cast<Eigen::Index>(n));
  b.censor.resize(static_cast<Eigen::Index>(n));
  b.param_a.resize(static_cast<Eigen::Index>(n));
  b.param_b.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    b.y.push_back(1.0 + 9.0 * rng.uniform());
    b.delta.push_back(rng.bernoulli(0.5));
    b.a.push_back(i % 2 == 0 ? 1 : static_cast<int>(rng.bernoulli(0.5)));
    b.event[k] = 1.0 + 9.0 * rng.uniform();
    b.censor[k] = 1.0 + 9.0 * rng.uniform();
    b.param_a[k] = 0.5 + 2.0 * rng.uniform();
    b.param_b[k] = 0.3 + 1.5 * rng.uniform();
  }
  b.a[1] = 0;
  b.latent = test::random_matrix(rng, static_cast<Eigen::Index>(n), latent_dim);
  return b;
}

double aft_single(double y, int delta, double a, double b, AftFamily f) {
  BatchDraws batch;
  batch.y = {y};
  batch.delta = {delta};
  batch.a = {0};
  batch.param_a = Eigen::VectorXd::Constant(1, a);
  batch.param_b = Eigen::VectorXd::Constant(1, b);
  return aft_nll(batch, f);
}

// Central-difference check of a LossTerm's per-subject partials.
template <typename F>
void check_term_gradient(BatchDraws b, F term) {
  const LossTerm t = term(b);
  const double h = 1e-6;
  auto sweep = [&](Eigen::VectorXd BatchDraws::*field, const Eigen::VectorXd& analytic) {
    if (analytic.size() == 0) return;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
      BatchDraws up = b, down = b;
      (up.*field)[i] += h;
      (down.*field)[i] -= h;
      const double fd = (term(up).value - term(down).value) / (2 * h);
      CHECK(std::abs(fd - analytic[i]) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
  };
  sweep(&BatchDraws::event, t.d_event);
  sweep(&BatchDraws::censor, t.d_censor);
  sweep(&BatchDraws::param_a, t.d_param_a);
  sweep(&BatchDraws::param_b, t.d_param_b);
}

}  // namespace

TEST_SUITE("loss") {

TEST_CASE("factual hinge examples") {
  CHECK(csa_factual_loss(single(10, 1, 10)) == 0.0);
  CHECK(csa_factual_loss(single(10, 0, 15)) == 0.0);
  CHECK(csa_factual_loss(single(10, 0, 7)) == 3.0);
  CHECK(csa_factual_loss(single(10, 1, 13)) == 3.0);
  CHECK(sr_loss(single(10, 1, 10)) == 0.0);
  CHECK(sr_loss(single(10, 0, 15)) == 0.0);
  CHECK(sr_loss(single(10, 0, 7)) == 3.0);
}

TEST_CASE("censoring hinge examples") {
  CHECK(censoring_loss(single(10, 0, 1, 10)) == 0.0);
  CHECK(censoring_loss(single(8, 1, 1, 9)) == 0.0);
  CHECK(censoring_loss(single(8, 1, 1, 6)) == 2.0);
}

TEST_CASE("time-order examples") {
  CHECK(time_order_loss(single(5, 1, 3, 7)) == 0.0);
  CHECK(time_order_loss(single(5, 0, 9, 4)) == 0.0);
  CHECK(time_order_loss(single(5, 0, 4, 9)) == 5.0);
  // Independent of y.
  CHECK(time_order_loss(single(500, 0, 4, 9)) == 5.0);
}

TEST_CASE("aggregate CSA-INFO loss") {
  CHECK(csa_info_loss(single(10, 1, 10, 12)) == 0.0);
  BatchDraws b = single(10, 0, 9, 12);  // factual 1, censoring 2, order 3
  CHECK(csa_factual_loss(b) == 1.0);
  CHECK(censoring_loss(b) == 2.0);
  CHECK(time_order_loss(b) == 3.0);
  CHECK(csa_info_loss(b) == 6.0);
  Rng rng(1);
  for (int r = 0; r < 20; ++r) {
    const BatchDraws rb = random_batch(rng, 30);
    const double sum = csa_factual_loss(rb) + censoring_loss(rb) + time_order_loss(rb);
    CHECK(std::abs(csa_info_loss(rb) - sum) <= 1e-12);
  }
}

TEST_CASE("censoring terms require censoring samples") {
  BatchDraws b = single(1, 1, 1);
  b.censor.resize(0);
  CHECK_THROWS_AS(censoring_loss(b), Error);
  CHECK_THROWS_AS(time_order_loss(b), Error);
  BatchDraws empty;
  CHECK_THROWS_AS(csa_factual_loss(empty), Error);
}

TEST_CASE("time order is zero on order-consistent samples") {
  Rng rng(2);
  BatchDraws b = random_batch(rng, 50);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const double lo = std::min(b.event[k], b.censor[k]), hi = std::max(b.event[k], b.censor[k]) + 1.0;
    b.event[k] = b.delta[i] == 1 ? lo : hi;
    b.censor[k] = b.delta[i] == 1 ? hi : lo;
  }
  CHECK(time_order_loss(b) == 0.0);
}

TEST_CASE("AFT negative log-likelihood examples") {
  const double mu = 1.3;
  CHECK(aft_single(std::exp(mu), 1, mu, 1.0, AftFamily::kLogNormal) ==
        doctest::Approx(mu + 0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-12));
  const double y = 2.0, lambda = 1.5, k = 1.7;
  CHECK(aft_single(y, 0, lambda, k, AftFamily::kWeibull) ==
        doctest::Approx(std::pow(y / lambda, k)).epsilon(1e-12));
  CHECK_THROWS_AS(aft_single(0.0, 1, mu, 1.0, AftFamily::kLogNormal), Error);
  CHECK_THROWS_AS(aft_single(1.0, 1, mu, 0.0, AftFamily::kLogNormal), Error);
  CHECK_THROWS_AS(aft_single(1.0, 1, 1.0, -1.0, AftFamily::kWeibull), Error);
}

TEST_CASE("AFT densities integrate to one") {
  for (AftFamily f : {AftFamily::kLogNormal, AftFamily::kWeibull}) {
    const double a = f == AftFamily::kLogNormal ? 0.4 : 1.6, b = f == AftFamily::kLogNormal ? 0.6 : 1.8;
    // Substitute t = e^u and integrate f(t) t du with the trapezoid rule.
    const double lo = -30.0, hi = 8.0;
    const int steps = 400000;
    const double du = (hi - lo) / steps;
    double integral = 0.0;
    for (int s = 0; s <= steps; ++s) {
      const double t = std::exp(lo + s * du);
      const double density = std::exp(-aft_point(t, 1, a, b, f).nll);
      integral += (s == 0 || s == steps ? 0.5 : 1.0) * density * t * du;
    }
    CHECK(std::abs(integral - 1.0) < 1e-6);
  }
}

TEST_CASE("far-tail log survival matches direct evaluation") {
  for (double z : {-3.0, 0.0, 2.0, 6.0}) {
    CHECK(log_normal_tail(z) == doctest::Approx(std::log(0.5 * std::erfc(z / std::sqrt(2.0)))).epsilon(1e-10));
  }
  CHECK(std::isfinite(log_normal_tail(60.0)));
  CHECK(log_normal_tail(60.0) < -1700.0);
}

TEST_CASE("losses are nonnegative and permutation invariant") {
  Rng rng(3);
  for (int r = 0; r < 10; ++r) {
    BatchDraws b = random_batch(rng, 25);
    CHECK(csa_factual_loss(b) >= 0.0);
    CHECK(censoring_loss(b) >= 0.0);
    CHECK(time_order_loss(b) >= 0.0);
    std::vector<std::size_t> perm(b.size());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    BatchDraws p = b;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      p.y[i] = b.y[perm[i]];
      p.delta[i] = b.delta[perm[i]];
      p.event[static_cast<Eigen::Index>(i)] = b.event[static_cast<Eigen::Index>(perm[i])];
    }
    CHECK(csa_factual_loss(p) == doctest::Approx(csa_factual_loss(b)).epsilon(1e-14));
  }
}

TEST_CASE("per-subject loss partials") {
  Rng rng(4);
  const BatchDraws b = random_batch(rng, 12);
  check_term_gradient(b, csa_factual_term);
  check_term_gradient(b, censoring_term);
  check_term_gradient(b, time_order_term);
  check_term_gradient(b, [](const BatchDraws& x) { return aft_nll_term(x, AftFamily::kLogNormal); });
  check_term_gradient(b, [](const BatchDraws& x) { return aft_nll_term(x, AftFamily::kWeibull); });
}

TEST_CASE("objective sums per-arm losses without weights") {
  Rng rng(5);
  const BatchDraws b = random_batch(rng, 20);
  ObjectiveOptions opt;
  opt.compute_ipm = false;
  const Objective o = total_objective(b, Mode::kCsa, opt);
  std::vector<std::size_t> arm[2];
  for (std::size_t i = 0; i < b.size(); ++i) arm[b.a[i]].push_back(i);
  for (int a = 0; a < 2; ++a) {
    double s = 0.0;
    for (std::size_t i : arm[a]) {
      s += b.delta[i] ? std::abs(b.y[i] - b.event[static_cast<Eigen::Index>(i)])
                      : std::max(0.0, b.y[i] - b.event[static_cast<Eigen::Index>(i)]);
    }
    CHECK(o.factual[a] == doctest::Approx(s / arm[a].size()));
  }
  CHECK(o.total == doctest::Approx(o.factual[0] + o.factual[1]));
  const double u = static_cast<double>(arm[1].size()) / b.size();
  CHECK(weighted_factual(o, b) == doctest::Approx(u * o.factual[1] + (1 - u) * o.factual[0]));
}

TEST_CASE("alpha zero leaves the factual loss alone") {
  Rng rng(6);
  const BatchDraws b = random_batch(rng, 20);
  for (Mode m : {Mode::kCsa, Mode::kCsaInfo, Mode::kAftLogNormal, Mode::kAftWeibull, Mode::kSr}) {
    ObjectiveOptions on, off;
    on.alpha = 0.0;
    off.compute_ipm = false;
    const Objective a = total_objective(b, m, on), c = total_objective(b, m, off);
    CHECK(a.total == c.total);
    CHECK(a.ipm > 0.0);
    CHECK(a.d_latent.cwiseAbs().maxCoeff() == 0.0);
  }
  ObjectiveOptions neg;
  neg.alpha = -1.0;
  CHECK_THROWS_AS(total_objective(b, Mode::kCsa, neg), Error);
}

TEST_CASE("empty arm gives a vacuous balancing term") {
  Rng rng(7);
  BatchDraws b = random_batch(rng, 10);
  std::fill(b.a.begin(), b.a.end(), 1);
  ObjectiveOptions opt;
  opt.alpha = 10.0;
  const Objective o = total_objective(b, Mode::kCsa, opt);
  CHECK(o.ipm_empty_group);
  CHECK(o.ipm == 0.0);
  CHECK(o.factual[0] == 0.0);
}

TEST_CASE("objective gradient with respect to the latents") {
  Rng rng(8);
  const BatchDraws b = random_batch(rng, 12);
  ObjectiveOptions opt;
  opt.alpha = 2.0;
  opt.ipm.tolerance = 1e-13;
  opt.ipm.max_iterations = 5000;
  const Objective o = total_objective(b, Mode::kCsa, opt);
  const double h = 1e-6;
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < b.latent.rows(); ++i) {
    for (Eigen::Index k = 0; k < b.latent.cols(); ++k) {
      BatchDraws up = b, down = b;
      up.latent(i, k) += h;
      down.latent(i, k) -= h;
      const double fd = (total_objective(up, Mode::kCsa, opt).total - total_objective(down, Mode::kCsa, opt).total) / (2 * h);
      num += std::pow(fd - o.d_latent(i, k), 2);
      den += fd * fd;
    }
  }
  CHECK(std::sqrt(num / den) < 1e-4);
}

}
