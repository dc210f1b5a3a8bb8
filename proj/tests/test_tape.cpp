#include <doctest.h>

#include <cmath>
#include <functional>

#include "csa/tape.h"
#include "helpers.h"

using namespace csa;

namespace {

using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

// Compares the reverse-mode gradient of sum(G .* f(params)) with central
// differences over every parameter entry.
double max_relative_error(ParameterSet& params, const Graph& f, std::uint64_t seed) {
  Rng rng(seed);
  RowMatrix g;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
  {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t s = 0; s < params.tensors().size(); ++s) vars.push_back(tape.parameter(params, s));
    const Var out = f(tape, vars);
    g = test::random_matrix(rng, tape.value(out).rows(), tape.value(out).cols());
    tape.seed(out, g);
    tape.backward();
    tape.accumulate(params, grad);
  }
  auto objective = [&] {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t s = 0; s < params.tensors().size(); ++s) vars.push_back(tape.parameter(params, s));
    return (tape.value(f(tape, vars)).array() * g.array()).sum();
  };
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < params.values().size(); ++i) {
    const double keep = params.values()[i];
    params.values()[i] = keep + h;
    const double up = objective();
    params.values()[i] = keep - h;
    const double down = objective();
    params.values()[i] = keep;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

ParameterSet make_params(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& shapes,
                         std::uint64_t seed) {
  ParameterSet p;
  for (std::size_t k = 0; k < shapes.size(); ++k) p.add("t" + std::to_string(k), shapes[k].first, shapes[k].second);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < p.values().size(); ++i) p.values()[i] = rng.normal();
  return p;
}

}  // namespace

TEST_SUITE("tape") {

TEST_CASE("parameter set layout") {
  ParameterSet p;
  CHECK(p.add("w", 2, 3) == 0);
  CHECK(p.add("b", 1, 3) == 1);
  CHECK(p.size() == 9);
  CHECK(p.index_of("b") == 1);
  CHECK_THROWS(p.index_of("zz"));
  p.values().setLinSpaced(9, 0, 8);
  CHECK(p.view(0)(1, 0) == 3.0);
  CHECK(p.view(1)(0, 2) == 8.0);
  ParameterSet q;
  q.add("w", 2, 3);
  q.add("b", 1, 3);
  CHECK(p.same_layout(q));
}

TEST_CASE("affine and matmul gradients") {
  auto p = make_params({{4, 3}, {2, 3}, {1, 2}}, 1);
  CHECK(max_relative_error(p, [](Tape& t, const std::vector<Var>& v) {
    return t.affine(v[0], v[1], v[2]);
  }, 2) < 1e-7);
  CHECK(max_relative_error(p, [](Tape& t, const std::vector<Var>& v) {
    return t.matmul_nt(v[0], v[1]);
  }, 3) < 1e-7);
}

TEST_CASE("elementwise gradients") {
  auto p = make_params({{5, 3}, {5, 3}}, 4);
  const RowMatrix mask = RowMatrix::Constant(5, 3, 2.0);
  const std::vector<std::pair<const char*, Graph>> ops{
      {"add", [](Tape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); }},
      {"add_scalar", [](Tape& t, const std::vector<Var>& v) { return t.add_scalar(v[0], 0.7); }},
      {"scale", [](Tape& t, const std::vector<Var>& v) { return t.scale(v[0], -1.3); }},
      {"leaky", [](Tape& t, const std::vector<Var>& v) { return t.leaky_relu(v[0], 0.01); }},
      {"tanh", [](Tape& t, const std::vector<Var>& v) { return t.tanh(v[0]); }},
      {"exp", [](Tape& t, const std::vector<Var>& v) { return t.exp(v[0]); }},
      {"softplus", [](Tape& t, const std::vector<Var>& v) { return t.softplus(v[0]); }},
      {"mask", [mask](Tape& t, const std::vector<Var>& v) { return t.mask(v[0], mask); }},
      {"concat", [](Tape& t, const std::vector<Var>& v) { return t.concat_cols(v[0], v[1]); }},
      {"slice", [](Tape& t, const std::vector<Var>& v) { return t.slice_cols(v[0], 1, 2); }},
      {"gather", [](Tape& t, const std::vector<Var>& v) { return t.gather_rows(v[0], {4, 0, 4}); }},
  };
  for (const auto& [name, op] : ops) {
    CAPTURE(name);
    CHECK(max_relative_error(p, op, 5) < 1e-7);
  }
}

TEST_CASE("softplus is stable for large inputs") {
  ParameterSet p;
  p.add("x", 1, 3);
  p.values() << -800.0, 0.0, 800.0;
  Tape t;
  const auto& v = t.value(t.softplus(t.parameter(p, 0)));
  CHECK(v(0, 0) >= 0.0);
  CHECK(v(0, 1) == doctest::Approx(std::log(2.0)));
  CHECK(v(0, 2) == 800.0);
}

TEST_CASE("batch norm gradients in both phases") {
  auto p = make_params({{6, 3}, {1, 3}, {1, 3}}, 6);
  double rmean[3] = {0.1, -0.2, 0.3}, rvar[3] = {1.5, 0.5, 2.0};
  Tape::RunningMoments m{rmean, rvar, nullptr, nullptr};
  for (bool training : {true, false}) {
    CAPTURE(training);
    CHECK(max_relative_error(p, [&](Tape& t, const std::vector<Var>& v) {
      return t.batch_norm(v[0], v[1], v[2], training, m);
    }, 7) < 1e-6);
  }
}

TEST_CASE("batch norm running moments update") {
  ParameterSet p;
  p.add("x", 4, 1);
  p.add("g", 1, 1);
  p.add("b", 1, 1);
  p.values() << 1, 2, 3, 4, 1, 0;
  double mean = 0.0, var = 1.0;
  Tape::RunningMoments m{&mean, &var, &mean, &var, 0.9, 1e-5};
  Tape t;
  t.batch_norm(t.parameter(p, 0), t.parameter(p, 1), t.parameter(p, 2), true, m);
  CHECK(mean == doctest::Approx(0.25));
  // Unbiased batch variance 5/3.
  CHECK(var == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));
}

TEST_CASE("gradient of a sum is the sum of gradients") {
  auto p = make_params({{3, 2}}, 8);
  const RowMatrix g = RowMatrix::Ones(3, 2);
  auto grad_of = [&](const Graph& f) {
    Tape t;
    const Var out = f(t, {t.parameter(p, 0)});
    t.seed(out, g);
    t.backward();
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(6);
    t.accumulate(p, grad);
    return grad;
  };
  const Graph a = [](Tape& t, const std::vector<Var>& v) { return t.tanh(v[0]); };
  const Graph b = [](Tape& t, const std::vector<Var>& v) { return t.exp(v[0]); };
  const Graph both = [](Tape& t, const std::vector<Var>& v) { return t.add(t.tanh(v[0]), t.exp(v[0])); };
  CHECK((grad_of(both) - grad_of(a) - grad_of(b)).norm() < 1e-12);
}

}
