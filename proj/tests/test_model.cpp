#include <doctest.h>

#include <cmath>
#include <functional>

#include "csa/metrics.h"
#include "csa/model.h"
#include "helpers.h"

using namespace csa;

namespace {

Architecture small_arch() {
  Architecture a;
  a.hidden = 6;
  a.latent = 4;
  a.head_hidden = 5;
  a.head_joint = 6;
  a.noise_dim = 3;
  return a;
}

Model make_model(Mode mode, std::uint64_t seed = 3, double range = 0.5, double time_scale = 1.0) {
  Model m(mode, 3, small_arch(), time_scale);
  m.initialize(seed, range);
  // Non-trivial running moments so evaluation phase is not the identity.
  Rng rng(seed + 1);
  for (Eigen::Index i = 0; i < m.buffers().values().size(); ++i) {
    m.buffers().values()[i] = 0.5 + rng.uniform();
  }
  return m;
}

void zero_all(Model& m) {
  m.params().values().setZero();
  for (std::size_t s = 0; s < m.params().tensors().size(); ++s) {
    if (m.params().tensors()[s].name.ends_with("bn.gamma")) m.params().view(s).setOnes();
  }
}

// Relative error between a reverse-mode gradient of sum(G .* f) and central
// differences of the same scalar, norm-wise over all parameters.
double gradient_error(Model& m, const std::function<Var(Tape&)>& graph,
                      const std::function<RowMatrix()>& value) {
  Rng rng(17);
  Tape tape;
  const Var out = graph(tape);
  const RowMatrix g = test::random_matrix(rng, tape.value(out).rows(), tape.value(out).cols());
  tape.seed(out, g);
  tape.backward();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.params().size()));
  tape.accumulate(m.params(), grad);

  Eigen::VectorXd fd(grad.size());
  const double h = 1e-5;
  auto& p = m.params().values();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double up = (value().array() * g.array()).sum();
    p[i] = keep - h;
    const double down = (value().array() * g.array()).sum();
    p[i] = keep;
    fd[i] = (up - down) / (2 * h);
  }
  return (grad - fd).norm() / std::max({grad.norm(), fd.norm(), 1e-300});
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("mode names") {
  for (Mode m : {Mode::kCsa, Mode::kCsaInfo, Mode::kAftLogNormal, Mode::kAftWeibull, Mode::kSr}) {
    CHECK(parse_mode(mode_name(m)) == m);
  }
  CHECK(parse_modes("CSA,SR") == std::vector<Mode>{Mode::kCsa, Mode::kSr});
  CHECK_THROWS_AS(parse_mode("DeepSurv"), Error);
}

TEST_CASE("encoder is deterministic in evaluation phase") {
  const Model m = make_model(Mode::kCsa);
  Rng rng(1);
  const RowMatrix x = test::random_matrix(rng, 5, 3);
  CHECK(m.encode(x, Phase::kEval) == m.encode(x, Phase::kEval));
}

TEST_CASE("all-zero weights give a zero representation") {
  Model m = make_model(Mode::kCsa);
  zero_all(m);
  m.buffers().values().setZero();
  for (std::size_t s = 0; s < m.buffers().tensors().size(); ++s) {
    if (m.buffers().tensors()[s].name.ends_with(".var")) m.buffers().view(s).setOnes();
  }
  Rng rng(2);
  const RowMatrix r = m.encode(test::random_matrix(rng, 4, 3), Phase::kEval);
  CHECK(r.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("evaluation outputs do not depend on batch composition") {
  const Model m = make_model(Mode::kCsaInfo);
  Rng rng(3);
  const RowMatrix x = test::random_matrix(rng, 6, 3);
  const RowMatrix all = m.encode(x, Phase::kEval);
  for (Eigen::Index i = 0; i < 6; ++i) {
    CHECK(m.encode(x.row(i), Phase::kEval) == all.row(i));
  }
  const RowMatrix sub = m.encode(x.topRows(2), Phase::kEval);
  CHECK(sub == all.topRows(2));
}

TEST_CASE("encoder gradient") {
  Model m = make_model(Mode::kCsa);
  Rng rng(4);
  const RowMatrix x = test::random_matrix(rng, 5, 3);
  const double err = gradient_error(
      m, [&](Tape& t) { return m.encode(t, t.constant(x), Phase::kEval, nullptr, nullptr); },
      [&] { return m.encode(x, Phase::kEval); });
  CHECK(err < 1e-4);
}

TEST_CASE("planar flow") {
  Model m = make_model(Mode::kCsaInfo);
  Rng rng(5);
  const RowMatrix eps = test::random_matrix(rng, 4, 3);
  for (Role role : {Role::kEvent, Role::kCensor}) {
    const auto& ps = m.params();
    const auto u = ps.view(ps.index_of(role == Role::kEvent ? "flow.event.U" : "flow.censor.U"));
    const auto w = ps.view(ps.index_of(role == Role::kEvent ? "flow.event.W" : "flow.censor.W"));
    const auto b = ps.view(ps.index_of(role == Role::kEvent ? "flow.event.b" : "flow.censor.b"));
    // Straight-line reimplementation, one subject and one coordinate at a time.
    const RowMatrix out = m.planar_transform(eps, role);
    for (int i = 0; i < 4; ++i) {
      for (int k = 0; k < 3; ++k) {
        double skip = 0.0;
        for (int j = 0; j < 3; ++j) {
          double inner = b(0, j);
          for (int l = 0; l < 3; ++l) inner += w(j, l) * eps(i, l);
          skip += u(k, j) * std::tanh(inner);
        }
        CHECK(std::abs(out(i, k) - (eps(i, k) + skip)) < 1e-12);
      }
    }
  }
  Model z = m;
  z.params().view(z.params().index_of("flow.event.U")).setZero();
  CHECK(z.planar_transform(eps, Role::kEvent) == eps);
  z = m;
  z.params().view(z.params().index_of("flow.event.W")).setZero();
  z.params().view(z.params().index_of("flow.event.b")).setZero();
  CHECK(z.planar_transform(eps, Role::kEvent) == eps);
  CHECK_THROWS_AS(make_model(Mode::kCsa).planar_transform(eps, Role::kCensor), Error);
}

TEST_CASE("sampled times are positive and deterministic given noise") {
  const Model m = make_model(Mode::kCsaInfo);
  Rng rng(6);
  const RowMatrix x = test::random_matrix(rng, 8, 3);
  const RowMatrix r = m.encode(x, Phase::kEval);
  const RowMatrix eps = m.draw_noise(8, rng);
  for (int arm : {0, 1}) {
    for (Role role : {Role::kEvent, Role::kCensor}) {
      const auto t = m.sample_time(r, arm, role, eps, Phase::kEval);
      CHECK((t.array() > 0.0).all());
      CHECK(t == m.sample_time(r, arm, role, eps, Phase::kEval));
    }
  }
}

TEST_CASE("sample head gradient including flow parameters") {
  Model m = make_model(Mode::kCsaInfo);
  Rng rng(7);
  const RowMatrix r = test::random_matrix(rng, 5, 4);
  const RowMatrix eps = m.draw_noise(5, rng);
  for (int arm : {0, 1}) {
    for (Role role : {Role::kEvent, Role::kCensor}) {
      const double err = gradient_error(
          m,
          [&](Tape& t) {
            return m.sample_head(t, t.constant(r), t.constant(eps), arm, role, Phase::kEval, nullptr, nullptr);
          },
          [&] { return RowMatrix(m.sample_time(r, arm, role, eps, Phase::kEval)); });
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("output bias shift by log 2 doubles every sampled time") {
  Model m = make_model(Mode::kCsa);
  Rng rng(8);
  const RowMatrix x = test::random_matrix(rng, 6, 3);
  const auto before = m.sample_potential_outcomes(x, 20, 4);
  for (const char* name : {"head.event.arm0.out.bias", "head.event.arm1.out.bias"}) {
    m.params().view(m.params().index_of(name)).array() += std::log(2.0);
  }
  const auto after = m.sample_potential_outcomes(x, 20, 4);
  for (int a = 0; a < 2; ++a) {
    CHECK(((after.arm[a].array() / before.arm[a].array()) - 2.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("exponential overflow reports the pre-activation") {
  Model m = make_model(Mode::kSr);
  m.params().view(m.params().index_of("sr.arm0.out.bias")).array() += 1000.0;
  Rng rng(9);
  const RowMatrix r = m.encode(test::random_matrix(rng, 2, 3), Phase::kEval);
  CHECK_THROWS_WITH_AS(m.sr_forward(r, 0), doctest::Contains("pre-activation"), Error);
}

TEST_CASE("AFT heads") {
  for (Mode mode : {Mode::kAftLogNormal, Mode::kAftWeibull}) {
    Model m = make_model(mode);
    zero_all(m);
    auto& ps = m.params();
    ps.view(ps.index_of("aft.arm0.out.bias")) << 0.7, -0.4;
    const RowMatrix r = RowMatrix::Zero(1, 4);
    const auto [a, b] = m.aft_forward(r, 0);
    const double softplus_b = std::log1p(std::exp(-0.4));
    if (mode == Mode::kAftLogNormal) {
      CHECK(a[0] == doctest::Approx(0.7));
    } else {
      CHECK(a[0] == doctest::Approx(std::log1p(std::exp(0.7))));
    }
    CHECK(b[0] == doctest::Approx(softplus_b));
  }
}

TEST_CASE("AFT head gradient") {
  for (Mode mode : {Mode::kAftLogNormal, Mode::kAftWeibull}) {
    Model m = make_model(mode);
    Rng rng(10);
    const RowMatrix r = test::random_matrix(rng, 5, 4);
    for (int arm : {0, 1}) {
      const double err = gradient_error(
          m,
          [&](Tape& t) {
            const auto [a, b] = m.aft_head(t, t.constant(r), arm, Phase::kEval, nullptr, nullptr);
            return t.concat_cols(a, b);
          },
          [&] {
            const auto [a, b] = m.aft_forward(r, arm);
            RowMatrix out(a.size(), 2);
            out.col(0) = a;
            out.col(1) = b;
            return out;
          });
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("log-normal Monte Carlo median") {
  Model m = make_model(Mode::kAftLogNormal);
  zero_all(m);
  // mu = 1, sigma = softplus(b) = 0.5.
  m.params().view(m.params().index_of("aft.arm0.out.bias")) << 1.0, std::log(std::exp(0.5) - 1.0);
  const auto s = m.sample_potential_outcomes(RowMatrix::Zero(1, 3), 100000, 5);
  CHECK(row_medians(s.arm[0])[0] == doctest::Approx(std::exp(1.0)).epsilon(0.02));
}

TEST_CASE("Weibull Monte Carlo median") {
  Model m = make_model(Mode::kAftWeibull);
  zero_all(m);
  const double lambda = 3.0, k = 1.5;
  m.params().view(m.params().index_of("aft.arm1.out.bias")) << std::log(std::exp(lambda) - 1.0),
      std::log(std::exp(k) - 1.0);
  const auto s = m.sample_potential_outcomes(RowMatrix::Zero(1, 3), 100000, 6);
  CHECK(row_medians(s.arm[1])[0] == doctest::Approx(lambda * std::pow(std::log(2.0), 1.0 / k)).epsilon(0.02));
  // Unit quantile: U = e^-1 gives t = lambda.
  CHECK(lambda * std::pow(-std::log(std::exp(-1.0)), 1.0 / k) == doctest::Approx(lambda));
}

TEST_CASE("SR prediction") {
  Model m = make_model(Mode::kSr);
  Rng rng(11);
  const RowMatrix r = test::random_matrix(rng, 7, 4);
  for (int arm : {0, 1}) {
    const auto t = m.sr_forward(r, arm);
    CHECK((t.array() > 0.0).all());
    CHECK(t == m.sr_forward(r, arm));
    const double err = gradient_error(
        m, [&](Tape& tape) { return m.sr_head(tape, tape.constant(r), arm, Phase::kEval, nullptr, nullptr); },
        [&] { return RowMatrix(m.sr_forward(r, arm)); });
    CHECK(err < 1e-4);
  }
  const auto s = m.sample_potential_outcomes(test::random_matrix(rng, 3, 3), 4, 1);
  CHECK(mean_cov(s.arm[0]) == 0.0);
}

TEST_CASE("flat parameter round trip") {
  Model a = make_model(Mode::kCsaInfo, 1);
  Model b = make_model(Mode::kCsaInfo, 2);
  CHECK(a.params().same_layout(b.params()));
  b.params().values() = a.params().values();
  b.buffers().values() = a.buffers().values();
  Rng rng(12);
  const RowMatrix x = test::random_matrix(rng, 4, 3);
  const auto sa = a.sample_potential_outcomes(x, 10, 3), sb = b.sample_potential_outcomes(x, 10, 3);
  CHECK(sa.arm[0] == sb.arm[0]);
  CHECK(sa.arm[1] == sb.arm[1]);
}

TEST_CASE("sampling is deterministic in the seed") {
  const Model m = make_model(Mode::kCsa);
  Rng rng(13);
  const RowMatrix x = test::random_matrix(rng, 4, 3);
  const auto a = m.sample_potential_outcomes(x, 30, 9), b = m.sample_potential_outcomes(x, 30, 9);
  CHECK(a.arm[1] == b.arm[1]);
  CHECK(a.arm[1] != m.sample_potential_outcomes(x, 30, 10).arm[1]);
  // A subject's draws do not depend on the rows sampled with it.
  CHECK(m.sample_potential_outcomes(x.topRows(2), 30, 9).arm[0] == a.arm[0].topRows(2));
}

TEST_CASE("checkpoint round trip and corruption") {
  const auto dir = test::scratch_dir("model_ckpt");
  for (Mode mode : {Mode::kCsa, Mode::kCsaInfo, Mode::kAftLogNormal, Mode::kAftWeibull, Mode::kSr}) {
    const Model m = make_model(mode, 21, 0.3, 250.0);
    save_checkpoint(dir / "m.bin", m, {{"alpha", 0.1}});
    const auto loaded = load_checkpoint(dir / "m.bin");
    CHECK(loaded.model.mode() == mode);
    CHECK(loaded.model.time_scale() == 250.0);
    CHECK(loaded.model.params().values() == m.params().values());
    CHECK(loaded.model.buffers().values() == m.buffers().values());
    CHECK(loaded.extra["alpha"] == 0.1);
  }
  auto bytes = test::read_text(dir / "m.bin");
  test::write_text(dir / "trunc.bin", bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.bin"), Error);
  test::write_text(dir / "magic.bin", "XX" + bytes.substr(2));
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.bin"), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), Error);
}

TEST_CASE("architecture validation") {
  Architecture a = small_arch();
  a.dropout = 1.0;
  CHECK_THROWS_AS(a.validate(), Error);
  a = small_arch();
  a.latent = 0;
  CHECK_THROWS_AS(a.validate(), Error);
  CHECK(Architecture::from_json(small_arch().to_json()).to_json() == small_arch().to_json());
}

}
