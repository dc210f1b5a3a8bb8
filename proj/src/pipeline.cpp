#include "csa/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

namespace csa {

namespace {

constexpr std::uint64_t kSampleSeedOffset = 101;
constexpr std::uint64_t kBootstrapSeedOffset = 202;

Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() ? p : base / p; }

SimConfig sim_from_source(const Json& j, const fs::path& base) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "actg_synthetic") return SimConfig::actg_synthetic();
    if (s == "null_effect") return SimConfig::null_effect();
    return SimConfig::from_json(read_json(resolve(s, base)));
  }
  return SimConfig::from_json(j);
}

std::string slug(Mode m) {
  std::string s = mode_name(m);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

CovariateSchema infer_schema(const fs::path& csv, const ColumnMap& map) {
  const CsvTable t = read_csv(csv);
  std::vector<ColumnSpec> cols;
  for (const auto& h : t.header) {
    if (h != map.time && h != map.event && h != map.treatment) cols.push_back({h, ColumnKind::kContinuous});
  }
  return CovariateSchema(std::move(cols));
}

std::string curve_csv(const HazardRatioEstimate& h) {
  std::ostringstream out;
  out << "time,value,ci_low,ci_high\n";
  for (std::size_t k = 0; k < h.time.size(); ++k) {
    out << format_double(h.time[k]) << ',' << format_double(h.hr[k]) << ',' << format_double(h.ci_low[k])
        << ',' << format_double(h.ci_high[k]) << '\n';
  }
  return out.str();
}

Json hr_json(const HazardRatioEstimate& h) {
  return {{"point", h.point},
          {"ci", {h.point_ci_low, h.point_ci_high}},
          {"slopes", {h.slope[0], h.slope[1]}},
          {"bootstrap_used", h.bootstrap_used},
          {"bootstrap_failed", h.bootstrap_failed},
          {"curve", {{"time", h.time}, {"hr", h.hr}, {"ci_low", h.ci_low}, {"ci_high", h.ci_high}}}};
}

struct Subset {
  RowMatrix x;
  std::vector<double> y;
  std::vector<int> delta;
  std::vector<int> a;
};

Subset take(const SurvivalDataset& d, const std::vector<std::size_t>& idx) {
  Subset s;
  s.x.resize(static_cast<Eigen::Index>(idx.size()), d.x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    s.x.row(static_cast<Eigen::Index>(i)) = d.x.row(static_cast<Eigen::Index>(idx[i]));
    s.y.push_back(d.outcomes.y[idx[i]]);
    s.delta.push_back(d.outcomes.delta[idx[i]]);
    s.a.push_back(d.outcomes.a[idx[i]]);
  }
  return s;
}

HrOptions hr_options(const ExperimentConfig& c) {
  HrOptions o;
  o.window_low = c.metrics.window_low;
  o.window_high = c.metrics.window_high;
  o.bootstrap = c.metrics.bootstrap;
  o.seed = c.seed + kBootstrapSeedOffset;
  return o;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (modes.empty()) throw Error("experiment: at least one mode is required");
  if (!dataset.simulate && dataset.data_csv.empty()) throw Error("experiment: no dataset source");
  if (metrics.clusters < 1) throw Error("experiment: clusters must be at least 1");
  if (metrics.grid_points < 2) throw Error("experiment: grid_points must be at least 2");
  if (!(metrics.window_low < metrics.window_high)) throw Error("experiment: empty fit window");
  if (output.empty()) throw Error("experiment: output directory is empty");
  for (Mode m : modes) train_config(m).validate();
}

ExperimentConfig ExperimentConfig::from_json(const Json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    if (j.contains("schema_version") && j.at("schema_version").get<int>() != kSchemaVersion) {
      throw Error("experiment config: unsupported schema_version");
    }
    const Json& ds = j.at("dataset");
    if (ds.contains("simulate")) {
      c.dataset.simulate = sim_from_source(ds.at("simulate"), base_dir);
    } else {
      c.dataset.data_csv = resolve(ds.at("data").get<std::string>(), base_dir);
      if (ds.contains("hidden")) c.dataset.hidden_csv = resolve(ds.at("hidden").get<std::string>(), base_dir);
    }
    if (ds.contains("schema")) c.dataset.schema = CovariateSchema::from_json(ds.at("schema"));
    if (ds.contains("columns")) {
      const Json& m = ds.at("columns");
      c.dataset.columns.time = m.value("time", c.dataset.columns.time);
      c.dataset.columns.event = m.value("event", c.dataset.columns.event);
      c.dataset.columns.treatment = m.value("treatment", c.dataset.columns.treatment);
    }
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j.at("modes")) c.modes.push_back(parse_mode(m.get<std::string>()));
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("mode_overrides")) {
      for (const auto& [k, v] : j.at("mode_overrides").items()) {
        c.mode_overrides[mode_name(parse_mode(k))] = v;
      }
    }
    if (j.contains("metrics")) {
      const Json& m = j.at("metrics");
      c.metrics.bootstrap = m.value("bootstrap", c.metrics.bootstrap);
      c.metrics.window_low = m.value("window_low", c.metrics.window_low);
      c.metrics.window_high = m.value("window_high", c.metrics.window_high);
      c.metrics.clusters = m.value("clusters", c.metrics.clusters);
      c.metrics.grid_points = m.value("grid_points", c.metrics.grid_points);
      c.metrics.require_truth = m.value("require_truth", c.metrics.require_truth);
    }
    if (j.contains("baselines")) {
      for (const auto& b : j.at("baselines")) c.baselines.push_back(parse_scheme(b.get<std::string>()));
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("output")) c.output = resolve(j.at("output").get<std::string>(), base_dir);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

Json ExperimentConfig::to_json() const {
  Json ds = Json::object();
  if (dataset.simulate) {
    ds["simulate"] = dataset.simulate->to_json();
  } else {
    ds["data"] = dataset.data_csv.string();
    if (!dataset.hidden_csv.empty()) ds["hidden"] = dataset.hidden_csv.string();
  }
  if (dataset.schema) ds["schema"] = dataset.schema->to_json();
  ds["columns"] = {{"time", dataset.columns.time},
                   {"event", dataset.columns.event},
                   {"treatment", dataset.columns.treatment}};
  Json modes_j = Json::array();
  for (Mode m : modes) modes_j.push_back(mode_name(m));
  Json overrides = Json::object();
  for (const auto& [k, v] : mode_overrides) overrides[k] = v;
  Json base = Json::array();
  for (auto b : baselines) base.push_back(scheme_name(b));
  return {{"schema_version", kSchemaVersion},
          {"dataset", ds},
          {"modes", modes_j},
          {"train", train.to_json()},
          {"mode_overrides", overrides},
          {"metrics",
           {{"bootstrap", metrics.bootstrap},
            {"window_low", metrics.window_low},
            {"window_high", metrics.window_high},
            {"clusters", metrics.clusters},
            {"grid_points", metrics.grid_points},
            {"require_truth", metrics.require_truth}}},
          {"baselines", base},
          {"seed", seed},
          {"output", output.string()}};
}

TrainConfig ExperimentConfig::train_config(Mode mode) const {
  TrainConfig t = train;
  const auto it = mode_overrides.find(mode_name(mode));
  if (it != mode_overrides.end()) t = TrainConfig::from_json(it->second, t);
  t.mode = mode;
  t.seed = seed;
  return t;
}

ExperimentConfig load_experiment(const fs::path& path) {
  return ExperimentConfig::from_json(read_json(path), path.parent_path());
}

fs::path mode_dir(const ExperimentConfig& config, Mode mode) { return config.output / slug(mode); }

namespace {

struct CohortFiles {
  fs::path data;
  fs::path hidden;
  std::optional<CovariateSchema> schema;
};

CohortFiles materialize(const ExperimentConfig& config) {
  if (!config.dataset.simulate) {
    return {config.dataset.data_csv, config.dataset.hidden_csv, config.dataset.schema};
  }
  const fs::path dir = config.output / "data";
  std::ostringstream quiet;
  cmd_simulate(*config.dataset.simulate, dir, quiet);
  return {dir / "cohort.csv", dir / "hidden.csv", cohort_schema(*config.dataset.simulate)};
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config, const std::optional<Standardization>& transform) {
  const CohortFiles files = materialize(config);
  if (!fs::exists(files.data)) throw Error("dataset file not found: " + files.data.string());
  const CovariateSchema schema = files.schema ? *files.schema : infer_schema(files.data, config.dataset.columns);
  RawDataset raw = with_split(load_csv(files.data, schema, config.dataset.columns), config.seed);
  raw = impute_missing(raw);
  PreparedData p;
  if (transform) {
    p.data = apply_standardization(raw, *transform);
    p.transform = *transform;
  } else {
    auto r = standardize(raw);
    p.data = std::move(r.dataset);
    p.transform = std::move(r.transform);
  }
  if (!files.hidden.empty()) {
    if (!fs::exists(files.hidden)) throw Error("hidden-outcomes file not found: " + files.hidden.string());
    p.hidden = load_hidden_csv(files.hidden);
    if (p.hidden.size() != p.data.size()) throw Error("hidden-outcomes file has a different row count");
  }
  return p;
}

void cmd_simulate(const SimConfig& config, const fs::path& out, std::ostream& log) {
  config.validate();
  const SimulatedCohort cohort = assemble_cohort(config);
  fs::create_directories(out);
  write_file_atomic(out / "cohort.csv", cohort_csv(cohort));
  write_file_atomic(out / "hidden.csv", hidden_csv(cohort));
  Json echo = config.to_json();
  echo["schema_version"] = kSchemaVersion;
  write_json(out / "sim_config.json", echo);
  log << "simulated " << cohort.data.size() << " records: events " << format_double(cohort.event_rate())
      << ", treated " << format_double(cohort.treated_rate()) << ", missing cells "
      << cohort.data.missing_count() << '\n';
}

void cmd_train(const ExperimentConfig& config, std::ostream& log) {
  const PreparedData p = prepare_data(config);
  for (Mode mode : config.modes) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig tc = config.train_config(mode);
    const GridResult g = alpha_grid_search(p.data, tc, thread_budget());
    const fs::path dir = mode_dir(config, mode);
    fs::create_directories(dir);
    Json extra = {{"alpha", g.report.chosen_alpha},
                  {"seed", config.seed},
                  {"standardization", p.transform.to_json()}};
    save_checkpoint(dir / "checkpoint.bin", g.model, extra);
    write_json(dir / "train_report.json", g.report.to_json(tc));
    write_file_atomic(dir / "training_curves.csv", g.report.curves_csv());
    log << mode_name(mode) << ": chose alpha " << format_double(g.report.chosen_alpha) << " ("
        << std::lround(seconds_since(t0)) << " s)\n";
  }
}

HazardRatioEstimate ground_truth_hr(const PreparedData& prepared, const std::vector<std::size_t>& subjects,
                                    const HrOptions& options) {
  if (prepared.hidden.empty()) throw Error("ground truth requires hidden potential outcomes");
  std::vector<double> t0, t1, y;
  for (std::size_t i : subjects) {
    t0.push_back(prepared.hidden[i].t0);
    t1.push_back(prepared.hidden[i].t1);
    y.push_back(prepared.data.outcomes.y[i]);
  }
  const std::vector<int> events(subjects.size(), 1);
  return nonparam_hr_from_summaries(t0, t1, y, events, options);
}

Json baseline_report(const SurvivalDataset& data, const std::vector<WeightScheme>& schemes) {
  Json out = Json::array();
  if (schemes.empty()) return out;
  std::optional<PropensityModel> prop;
  for (WeightScheme s : schemes) {
    Json e = {{"scheme", scheme_name(s)}};
    try {
      if (s != WeightScheme::kUniform && !prop) prop = fit_logistic_propensity(data);
      const Eigen::VectorXd w = s == WeightScheme::kUniform ? Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.size()))
                                                            : compute_weights(*prop, data, s);
      const CoxModel m = fit_weighted_coxph(data.outcomes.y, data.outcomes.delta, data.outcomes.a, w, s);
      const CoxHazardRatio h = coxph_hr(m);
      e["beta"] = m.beta;
      e["hr"] = h.hr;
      e["ci_low"] = h.ci_low;
      e["ci_high"] = h.ci_high;
      e["converged"] = m.converged;
    } catch (const Error& err) {
      e["converged"] = false;
      e["error"] = err.what();
    }
    out.push_back(std::move(e));
  }
  return out;
}

Json evaluate_model(const Model& model, const PreparedData& prepared, const ExperimentConfig& config,
                    const fs::path& out_dir) {
  const auto test_idx = prepared.data.indices(Split::kTest);
  if (test_idx.empty()) throw Error("evaluate: test split is empty");
  const Subset test = take(prepared.data, test_idx);
  const TrainConfig tc = config.train_config(model.mode());
  const EventTimeSamples samples =
      model.sample_potential_outcomes(test.x, tc.samples, config.seed + kSampleSeedOffset);
  samples.validate();
  fs::create_directories(out_dir);

  Json r = {{"schema_version", kSchemaVersion}, {"kind", "metrics"}, {"method", mode_name(model.mode())},
            {"split", "test"}, {"subjects", test_idx.size()}, {"draws", samples.draws()}};

  const RowMatrix factual = factual_draws(samples, test.a);
  Json c_index_j = Json::array(), slope_j = Json::array();
  for (int a = 0; a < 2; ++a) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < test.a.size(); ++i) {
      if (test.a[i] == a) rows.push_back(i);
    }
    RowMatrix arm_draws(static_cast<Eigen::Index>(rows.size()), factual.cols());
    std::vector<double> y;
    std::vector<int> d;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      arm_draws.row(static_cast<Eigen::Index>(k)) = factual.row(static_cast<Eigen::Index>(rows[k]));
      y.push_back(test.y[rows[k]]);
      d.push_back(test.delta[rows[k]]);
    }
    try {
      const Eigen::VectorXd med = row_medians(arm_draws);
      c_index_j.push_back(c_index(std::span<const double>(med.data(), y.size()), y, d));
    } catch (const Error&) {
      c_index_j.push_back(nullptr);
    }
    try {
      slope_j.push_back(calibration_slope(arm_draws, y, d));
    } catch (const Error&) {
      slope_j.push_back(nullptr);
    }
  }
  r["c_index_by_arm"] = c_index_j;
  r["calibration_slope_by_arm"] = slope_j;
  r["mean_cov"] = number_or_null(mean_cov(factual));

  const HrOptions ho = hr_options(config);
  try {
    const HazardRatioEstimate h = nonparam_hr(samples, test.y, test.delta, ho);
    r["hr"] = hr_json(h);
    write_file_atomic(out_dir / "hr_curve.csv", curve_csv(h));
    std::ostringstream curves;
    curves << "curve,arm,time,survival\n";
    for (int a = 0; a < 2; ++a) {
      for (std::size_t k = 0; k < h.curve[a].size(); ++k) {
        curves << "pkm," << a << ',' << format_double(h.curve[a].time[k]) << ','
               << format_double(h.curve[a].survival[k]) << '\n';
      }
    }
    for (int a = 0; a < 2; ++a) {
      std::vector<double> y;
      std::vector<int> d;
      for (std::size_t i = 0; i < test.a.size(); ++i) {
        if (test.a[i] == a) {
          y.push_back(test.y[i]);
          d.push_back(test.delta[i]);
        }
      }
      if (y.empty()) continue;
      const SurvivalCurve km = km_curve(y, d);
      for (std::size_t k = 0; k < km.size(); ++k) {
        curves << "km," << a << ',' << format_double(km.time[k]) << ',' << format_double(km.survival[k]) << '\n';
      }
    }
    write_file_atomic(out_dir / "survival_curves.csv", curves.str());
  } catch (const Error& e) {
    r["hr"] = nullptr;
    r["hr_error"] = e.what();
  }

  // Individual traces need spread in the draws; point predictors have none.
  try {
    const auto grid = quantile_grid(test.y, config.metrics.grid_points);
    const ConditionalHr chr = conditional_hr(samples, grid);
    RowMatrix logs = chr.hr.array().log().matrix();
    const std::size_t k = std::min(config.metrics.clusters, test_idx.size());
    const Clustering cl = stratify_hr_traces(logs, k);
    std::ostringstream traces, labels;
    traces << "cluster,size,time,mean_log_hr\n";
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t g = 0; g < grid.size(); ++g) {
        traces << c << ',' << cl.sizes[c] << ',' << format_double(grid[g]) << ','
               << format_double(cl.mean_traces(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(g))) << '\n';
      }
    }
    labels << "record,cluster\n";
    for (std::size_t i = 0; i < test_idx.size(); ++i) labels << test_idx[i] << ',' << cl.labels[i] << '\n';
    write_file_atomic(out_dir / "cluster_traces.csv", traces.str());
    write_file_atomic(out_dir / "cluster_labels.csv", labels.str());
    r["clusters"] = {{"k", k}, {"sizes", cl.sizes}};
  } catch (const Error& e) {
    r["clusters"] = nullptr;
    r["clusters_error"] = e.what();
  }

  if (prepared.hidden.empty() && config.metrics.require_truth) {
    throw Error("PEHE and ATE error requested but the dataset has no hidden potential outcomes");
  }
  if (!prepared.hidden.empty()) {
    const Eigen::VectorXd pred = ite_expected_lifetime(samples);
    Eigen::VectorXd truth(pred.size());
    for (std::size_t i = 0; i < test_idx.size(); ++i) {
      const auto& h = prepared.hidden[test_idx[i]];
      truth[static_cast<Eigen::Index>(i)] = h.t1 - h.t0;
    }
    r["pehe"] = pehe(pred, truth);
    r["ate_error"] = ate_error(pred, truth);
    r["ate_predicted"] = pred.mean();
    r["ate_true"] = truth.mean();
    try {
      r["ground_truth_hr"] = hr_json(ground_truth_hr(prepared, test_idx, ho));
    } catch (const Error& e) {
      r["ground_truth_hr"] = nullptr;
      r["ground_truth_error"] = e.what();
    }
  }
  return r;
}

void cmd_evaluate(const ExperimentConfig& config, std::ostream& log) {
  std::optional<Json> baselines;
  for (Mode mode : config.modes) {
    const fs::path dir = mode_dir(config, mode);
    const fs::path ckpt = dir / "checkpoint.bin";
    if (!fs::exists(ckpt)) throw Error("checkpoint not found: " + ckpt.string() + " (run train first)");
    const LoadedCheckpoint loaded = load_checkpoint(ckpt);
    if (loaded.model.mode() != mode) throw Error("checkpoint mode does not match " + std::string(mode_name(mode)));
    const PreparedData p =
        prepare_data(config, Standardization::from_json(loaded.extra.at("standardization")));
    Json report = evaluate_model(loaded.model, p, config, dir);
    report["alpha"] = loaded.extra.value("alpha", 0.0);
    if (!config.baselines.empty()) {
      if (!baselines) baselines = baseline_report(p.data, config.baselines);
      report["baselines"] = *baselines;
    }
    write_json(dir / "metrics.json", report);
    log << mode_name(mode) << ": wrote " << (dir / "metrics.json").string() << '\n';
  }
}

const std::vector<std::string>& comparison_columns() {
  static const std::vector<std::string> cols = {"method",     "pehe",       "ate_error",  "hr",
                                                "hr_ci_low",  "hr_ci_high", "c_index_a0", "c_index_a1",
                                                "mean_cov",   "c_slope_a0", "c_slope_a1"};
  return cols;
}

Json cmd_compare(const std::vector<fs::path>& reports, const fs::path& out, std::ostream& log) {
  if (reports.size() < 2) throw Error("compare needs at least two reports");
  const auto& cols = comparison_columns();
  Json rows = Json::array();
  std::set<std::string> baseline_seen;
  std::optional<Json> truth;
  const auto pick = [](const Json& j, const char* key, std::size_t i) -> Json {
    if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() <= i) return nullptr;
    return j.at(key).at(i);
  };
  const auto get = [](const Json& j, const char* key) -> Json { return j.contains(key) ? j.at(key) : Json(nullptr); };
  for (const auto& path : reports) {
    const Json r = read_json(path);
    if (r.value("schema_version", -1) != kSchemaVersion || r.value("kind", std::string()) != "metrics") {
      throw Error("not a metrics report of schema version " + std::to_string(kSchemaVersion) + ": " + path.string());
    }
    Json row = Json::object();
    row["method"] = r.at("method");
    row["pehe"] = get(r, "pehe");
    row["ate_error"] = get(r, "ate_error");
    const Json hr = get(r, "hr");
    row["hr"] = hr.is_object() ? hr.at("point") : Json(nullptr);
    row["hr_ci_low"] = hr.is_object() ? hr.at("ci").at(0) : Json(nullptr);
    row["hr_ci_high"] = hr.is_object() ? hr.at("ci").at(1) : Json(nullptr);
    row["c_index_a0"] = pick(r, "c_index_by_arm", 0);
    row["c_index_a1"] = pick(r, "c_index_by_arm", 1);
    row["mean_cov"] = get(r, "mean_cov");
    row["c_slope_a0"] = pick(r, "calibration_slope_by_arm", 0);
    row["c_slope_a1"] = pick(r, "calibration_slope_by_arm", 1);
    rows.push_back(row);
    if (!truth && r.contains("ground_truth_hr") && r.at("ground_truth_hr").is_object()) truth = r.at("ground_truth_hr");
    if (r.contains("baselines")) {
      for (const auto& b : r.at("baselines")) {
        const std::string name = "CoxPH-" + b.at("scheme").get<std::string>();
        if (!baseline_seen.insert(name).second) continue;
        Json br = Json::object();
        for (const auto& c : cols) br[c] = nullptr;
        br["method"] = name;
        br["hr"] = get(b, "hr");
        br["hr_ci_low"] = get(b, "ci_low");
        br["hr_ci_high"] = get(b, "ci_high");
        rows.push_back(br);
      }
    }
  }
  if (truth) {
    Json tr = Json::object();
    for (const auto& c : cols) tr[c] = nullptr;
    tr["method"] = "ground-truth";
    tr["hr"] = truth->at("point");
    tr["hr_ci_low"] = truth->at("ci").at(0);
    tr["hr_ci_high"] = truth->at("ci").at(1);
    rows.push_back(tr);
  }
  std::ostringstream csv;
  for (std::size_t c = 0; c < cols.size(); ++c) csv << (c ? "," : "") << cols[c];
  csv << '\n';
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c) csv << ',';
      const Json& v = row.at(cols[c]);
      if (v.is_null()) {
        csv << "NA";
      } else if (v.is_string()) {
        csv << v.get<std::string>();
      } else {
        csv << format_double(v.get<double>());
      }
    }
    csv << '\n';
  }
  Json table = {{"schema_version", kSchemaVersion}, {"kind", "comparison"}, {"columns", cols}, {"rows", rows}};
  fs::create_directories(out);
  write_file_atomic(out / "comparison.csv", csv.str());
  write_json(out / "comparison.json", table);
  log << "compared " << reports.size() << " reports into " << (out / "comparison.csv").string() << '\n';
  return table;
}

void cmd_reproduce(const ExperimentConfig& config, std::ostream& log) {
  cmd_train(config, log);
  cmd_evaluate(config, log);
  std::vector<fs::path> reports;
  for (Mode m : config.modes) reports.push_back(mode_dir(config, m) / "metrics.json");
  if (reports.size() >= 2) {
    cmd_compare(reports, config.output, log);
  } else {
    log << "single mode; comparison skipped\n";
  }
}

}  // namespace csa
