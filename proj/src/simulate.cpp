#include "csa/simulate.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "csa/random.h"

namespace csa {

namespace {

// Substream identifiers; every unit draws from (seed, stream, unit index).
constexpr std::uint64_t kStreamCovariates = 11;
constexpr std::uint64_t kStreamAssignment = 12;
constexpr std::uint64_t kStreamEvent0 = 13;
constexpr std::uint64_t kStreamEvent1 = 14;
constexpr std::uint64_t kStreamCensor = 15;
constexpr std::uint64_t kStreamMissing = 16;

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Json vec_to_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vec_from_json(const Json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

}  // namespace

void SimConfig::validate() const {
  const std::size_t dim = p();
  if (dim < 2) throw Error("SimConfig: need at least 2 covariates");
  for (const auto& c : covariates) {
    if (c.family == CovariateMarginal::Family::kGaussian && !(c.sd >= 0.0)) {
      throw Error("SimConfig: covariate " + c.name + " has negative sd");
    }
    if (c.family == CovariateMarginal::Family::kBernoulli &&
        !(c.mean >= 0.0 && c.mean <= 1.0)) {
      throw Error("SimConfig: covariate " + c.name + " rate outside [0,1]");
    }
  }
  for (int a = 0; a < 2; ++a) {
    if (static_cast<std::size_t>(beta[a].size()) != dim) {
      throw Error("SimConfig: beta" + std::to_string(a) + " must have length p");
    }
    if (!(lambda[a] > 0.0)) {
      throw Error("SimConfig: lambda" + std::to_string(a) + " must be positive");
    }
    if (!std::isfinite(alpha[a])) throw Error("SimConfig: alpha must be finite");
  }
  if (!(sigma_c > 0.0)) throw Error("SimConfig: sigma_c must be positive");
  if (!(b_scale > 0.0) || !(a_off >= 0.0) || !((a_off + 1.0) / b_scale < 1.0)) {
    throw Error(
        "SimConfig: propensity bound violated: need a_off >= 0 and "
        "(a_off + 1) / b_scale < 1 for overlap, got lower " +
        format_double(a_off / b_scale) + " upper " +
        format_double((a_off + 1.0) / b_scale));
  }
  if (confounders.empty()) throw Error("SimConfig: no confounder columns");
  for (std::size_t k : confounders) {
    if (k >= dim) throw Error("SimConfig: confounder index out of range");
  }
  if (censor_shift.size() != 0 && static_cast<std::size_t>(censor_shift.size()) != dim) {
    throw Error("SimConfig: censor_shift must be empty or length p");
  }
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) {
    throw Error("SimConfig: missing_rate must lie in [0,1)");
  }
}

Json SimConfig::to_json() const {
  Json cov = Json::array();
  for (const auto& c : covariates) {
    Json e = {{"name", c.name}};
    if (c.family == CovariateMarginal::Family::kGaussian) {
      e["family"] = "gaussian";
      e["mean"] = c.mean;
      e["sd"] = c.sd;
    } else {
      e["family"] = "bernoulli";
      e["rate"] = c.mean;
    }
    cov.push_back(std::move(e));
  }
  Json j = {{"schema_version", kSchemaVersion},
            {"covariates", cov},
            {"beta0", vec_to_json(beta[0])},
            {"beta1", vec_to_json(beta[1])},
            {"alpha0", alpha[0]},
            {"alpha1", alpha[1]},
            {"lambda0", lambda[0]},
            {"lambda1", lambda[1]},
            {"a_off", a_off},
            {"b_scale", b_scale},
            {"eta", eta},
            {"mu_c", mu_c},
            {"sigma_c", sigma_c},
            {"confounders", confounders},
            {"missing_rate", missing_rate},
            {"n", n},
            {"seed", seed}};
  if (censor_shift.size() != 0) j["censor_shift"] = vec_to_json(censor_shift);
  if (assignment_seed) j["assignment_seed"] = *assignment_seed;
  return j;
}

SimConfig SimConfig::from_json(const Json& j) {
  SimConfig c;
  try {
    for (const auto& e : j.at("covariates")) {
      CovariateMarginal m;
      m.name = e.at("name").get<std::string>();
      const auto fam = e.value("family", std::string("gaussian"));
      if (fam == "gaussian") {
        m.family = CovariateMarginal::Family::kGaussian;
        m.mean = e.at("mean").get<double>();
        m.sd = e.at("sd").get<double>();
      } else if (fam == "bernoulli") {
        m.family = CovariateMarginal::Family::kBernoulli;
        m.mean = e.at("rate").get<double>();
      } else {
        throw Error("unknown covariate family '" + fam + "'");
      }
      c.covariates.push_back(std::move(m));
    }
    c.beta[0] = vec_from_json(j.at("beta0"));
    c.beta[1] = vec_from_json(j.at("beta1"));
    c.alpha[0] = j.at("alpha0").get<double>();
    c.alpha[1] = j.at("alpha1").get<double>();
    c.lambda[0] = j.at("lambda0").get<double>();
    c.lambda[1] = j.at("lambda1").get<double>();
    c.a_off = j.at("a_off").get<double>();
    c.b_scale = j.at("b_scale").get<double>();
    c.eta = j.at("eta").get<double>();
    c.mu_c = j.at("mu_c").get<double>();
    c.sigma_c = j.at("sigma_c").get<double>();
    c.confounders = j.at("confounders").get<std::vector<std::size_t>>();
    c.missing_rate = j.value("missing_rate", 0.0);
    c.n = j.value("n", std::size_t{1000});
    c.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("censor_shift")) c.censor_shift = vec_from_json(j.at("censor_shift"));
    if (j.contains("assignment_seed")) c.assignment_seed = j.at("assignment_seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid SimConfig JSON: ") + e.what());
  }
  c.validate();
  return c;
}

SimConfig SimConfig::actg_synthetic() {
  using F = CovariateMarginal::Family;
  SimConfig c;
  c.covariates = {
      {"age", F::kGaussian, 35.0, 9.0},      {"wtkg", F::kGaussian, 75.0, 13.0},
      {"karnof", F::kGaussian, 95.0, 6.0},   {"cd40", F::kGaussian, 350.0, 120.0},
      {"cd420", F::kGaussian, 370.0, 140.0}, {"cd80", F::kGaussian, 990.0, 480.0},
      {"cd820", F::kGaussian, 935.0, 450.0}, {"preanti", F::kGaussian, 380.0, 470.0},
      {"hemo", F::kBernoulli, 0.08, 0.0},    {"homo", F::kBernoulli, 0.66, 0.0},
      {"drugs", F::kBernoulli, 0.13, 0.0},   {"race", F::kBernoulli, 0.29, 0.0},
      {"gender", F::kBernoulli, 0.83, 0.0},  {"str2", F::kBernoulli, 0.58, 0.0},
      {"symptom", F::kBernoulli, 0.17, 0.0}, {"offtrt", F::kBernoulli, 0.36, 0.0},
      {"oprior", F::kBernoulli, 0.02, 0.0},  {"z30", F::kBernoulli, 0.55, 0.0},
      {"zprior", F::kBernoulli, 0.95, 0.0},  {"strat1", F::kBernoulli, 0.50, 0.0},
      {"strat2", F::kBernoulli, 0.30, 0.0},  {"hist", F::kBernoulli, 0.70, 0.0},
      {"site", F::kBernoulli, 0.40, 0.0},
  };
  const Eigen::Index p = static_cast<Eigen::Index>(c.covariates.size());
  c.beta[0] = Eigen::VectorXd::Zero(p);
  c.beta[0][0] = 0.04;    // age
  c.beta[0][2] = -0.01;   // karnof
  c.beta[0][3] = 0.006;   // cd40
  c.beta[0][9] = 0.2;     // homo
  c.beta[0][12] = 0.15;   // gender
  c.beta[1] = c.beta[0];
  c.beta[1][0] = 0.028;
  c.beta[1][3] = 0.0048;
  c.alpha[0] = c.alpha[1] = 0.001;
  c.lambda[0] = 5.5e-5;
  c.lambda[1] = 4.95e-5;
  c.a_off = 0.3;
  c.b_scale = 1.4311;
  c.eta = 0.02;
  c.mu_c = 6.6;
  c.sigma_c = 0.6;
  c.confounders = {0, 3};
  c.missing_rate = 0.0138;
  c.n = 2139;
  c.seed = 20210814;
  return c;
}

SimConfig SimConfig::null_effect() {
  SimConfig c = actg_synthetic();
  c.beta[1] = c.beta[0];
  c.alpha[1] = c.alpha[0];
  c.lambda[1] = c.lambda[0];
  c.n = 5000;
  return c;
}

double SimulatedCohort::event_rate() const {
  const auto& d = data.outcomes.delta;
  double s = 0;
  for (int v : d) s += v;
  return d.empty() ? 0.0 : s / static_cast<double>(d.size());
}

double SimulatedCohort::treated_rate() const {
  const auto& a = data.outcomes.a;
  double s = 0;
  for (int v : a) s += v;
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

Eigen::MatrixXd simulate_covariates(std::size_t n,
                                    const std::vector<CovariateMarginal>& marginals,
                                    std::uint64_t seed) {
  if (n < 1) throw Error("simulate_covariates: n must be at least 1");
  if (marginals.size() < 2) throw Error("simulate_covariates: p must be at least 2");
  const auto p = static_cast<Eigen::Index>(marginals.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), p);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, kStreamCovariates, i);
    for (Eigen::Index k = 0; k < p; ++k) {
      const auto& m = marginals[static_cast<std::size_t>(k)];
      x(static_cast<Eigen::Index>(i), k) =
          m.family == CovariateMarginal::Family::kGaussian
              ? rng.normal(m.mean, m.sd)
              : (rng.bernoulli(m.mean) ? 1.0 : 0.0);
    }
  }
  return x;
}

double propensity(const Eigen::VectorXd& x, const SimConfig& config,
                  const Eigen::VectorXd& confounder_means) {
  double z = 0.0;
  for (std::size_t k = 0; k < config.confounders.size(); ++k) {
    z += x[static_cast<Eigen::Index>(config.confounders[k])] -
         confounder_means[static_cast<Eigen::Index>(k)];
  }
  const double e = (config.a_off + sigmoid(config.eta * z)) / config.b_scale;
  if (!(e > 0.0 && e < 1.0)) {
    throw Error("propensity bound violated: value " + format_double(e) +
                " outside (0,1)");
  }
  return e;
}

std::optional<double> sample_gompertz_cox(const Eigen::VectorXd& x, int arm,
                                          double u, const SimConfig& config) {
  if (!(u > 0.0 && u <= 1.0)) throw Error("sample_gompertz_cox: u must lie in (0,1]");
  if (arm != 0 && arm != 1) throw Error("sample_gompertz_cox: arm must be 0 or 1");
  const double rate = config.lambda[arm] * std::exp(x.dot(config.beta[arm]));
  const double shape = config.alpha[arm];
  const double log_u = std::log(u);
  if (std::abs(shape) < 1e-12) {
    // Exponential limit of the Gompertz family.
    return -log_u / rate;
  }
  const double arg = 1.0 - shape * log_u / rate;
  if (!(arg > 0.0)) return std::nullopt;
  return std::log(arg) / shape;
}

SimulatedCohort assemble_cohort(const SimConfig& config, std::size_t n) {
  config.validate();
  SimulatedCohort cohort;
  cohort.x = simulate_covariates(n, config.covariates, config.seed);
  const auto& x = cohort.x;

  Eigen::VectorXd mu(static_cast<Eigen::Index>(config.confounders.size()));
  for (std::size_t k = 0; k < config.confounders.size(); ++k) {
    mu[static_cast<Eigen::Index>(k)] = x.col(static_cast<Eigen::Index>(config.confounders[k])).mean();
  }
  const std::uint64_t arm_seed = config.assignment_seed.value_or(config.seed);

  RawDataset& data = cohort.data;
  data.schema = cohort_schema(config);
  data.columns.resize(config.p());
  cohort.hidden.resize(n);

  auto draw_time = [&](const Eigen::VectorXd& xi, int arm, std::uint64_t stream,
                       std::size_t i) {
    Rng rng = Rng::substream(config.seed, stream, i);
    for (;;) {
      const double u = rng.uniform_open_low();
      if (auto t = sample_gompertz_cox(xi, arm, u, config)) return *t;
      ++cohort.rejected_draws;
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd xi = x.row(static_cast<Eigen::Index>(i)).transpose();
    HiddenOutcome& h = cohort.hidden[i];
    h.propensity = propensity(xi, config, mu);
    Rng arm_rng = Rng::substream(arm_seed, kStreamAssignment, i);
    const int a = arm_rng.bernoulli(h.propensity) ? 1 : 0;
    h.t0 = draw_time(xi, 0, kStreamEvent0, i);
    h.t1 = draw_time(xi, 1, kStreamEvent1, i);
    Rng c_rng = Rng::substream(config.seed, kStreamCensor, i);
    double loc = config.mu_c;
    if (config.censor_shift.size() != 0) loc += xi.dot(config.censor_shift);
    h.c = std::exp(c_rng.normal(loc, config.sigma_c));
    const double ta = a == 1 ? h.t1 : h.t0;
    data.outcomes.y.push_back(std::min(ta, h.c));
    data.outcomes.delta.push_back(ta < h.c ? 1 : 0);
    data.outcomes.a.push_back(a);

    Rng miss_rng = Rng::substream(config.seed, kStreamMissing, i);
    for (std::size_t k = 0; k < config.p(); ++k) {
      const bool missing = config.missing_rate > 0.0 && miss_rng.bernoulli(config.missing_rate);
      data.columns[k].missing.push_back(missing);
      data.columns[k].numeric.push_back(
          missing ? std::numeric_limits<double>::quiet_NaN()
                  : xi[static_cast<Eigen::Index>(k)]);
    }
  }
  return cohort;
}

CovariateSchema cohort_schema(const SimConfig& config) {
  std::vector<ColumnSpec> cols;
  for (const auto& c : config.covariates) cols.push_back({c.name, ColumnKind::kContinuous});
  return CovariateSchema(std::move(cols));
}

std::string cohort_csv(const SimulatedCohort& cohort) {
  const auto& d = cohort.data;
  std::ostringstream out;
  for (const auto& c : d.schema.columns()) out << c.name << ',';
  out << "y,delta,a\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t k = 0; k < d.schema.size(); ++k) {
      if (!d.columns[k].missing[i]) out << format_double(d.columns[k].numeric[i]);
      out << ',';
    }
    out << format_double(d.outcomes.y[i]) << ',' << d.outcomes.delta[i] << ','
        << d.outcomes.a[i] << '\n';
  }
  return out.str();
}

std::string hidden_csv(const SimulatedCohort& cohort) {
  std::ostringstream out;
  out << "t0,t1,c,propensity\n";
  for (const auto& h : cohort.hidden) {
    out << format_double(h.t0) << ',' << format_double(h.t1) << ','
        << format_double(h.c) << ',' << format_double(h.propensity) << '\n';
  }
  return out.str();
}

std::vector<HiddenOutcome> load_hidden_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const int i0 = t.column("t0"), i1 = t.column("t1"), ic = t.column("c"),
            ip = t.column("propensity");
  if (i0 < 0 || i1 < 0 || ic < 0 || ip < 0) {
    throw Error("hidden-outcomes CSV needs columns t0,t1,c,propensity");
  }
  std::vector<HiddenOutcome> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    try {
      out.push_back({std::stod(row[i0]), std::stod(row[i1]), std::stod(row[ic]),
                     std::stod(row[ip])});
    } catch (const std::exception&) {
      throw Error("hidden-outcomes CSV: malformed row " + std::to_string(r + 1));
    }
  }
  return out;
}

}  // namespace csa
