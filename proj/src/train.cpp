#include "csa/train.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>
#include <thread>
#include <utility>

namespace csa {

namespace {
constexpr std::uint64_t kStreamEpoch = 0xE90C;
constexpr std::uint64_t kStreamValidation = 0x7A11D;
}  // namespace

void TrainConfig::validate() const {
  if (alpha_grid.empty()) throw Error("TrainConfig: alpha grid is empty");
  for (double a : alpha_grid) {
    if (!(a >= 0.0) || !std::isfinite(a)) throw Error("TrainConfig: alpha values must be >= 0");
  }
  if (batch_size < 2) throw Error("TrainConfig: batch_size must be at least 2");
  if (patience < 1) throw Error("TrainConfig: patience must be at least 1");
  if (max_epochs < 1) throw Error("TrainConfig: max_epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw Error("TrainConfig: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw Error("TrainConfig: Adam decays must lie in [0,1)");
  }
  if (!(adam_epsilon > 0.0)) throw Error("TrainConfig: adam_epsilon must be positive");
  if (!(init_range > 0.0)) throw Error("TrainConfig: init_range must be positive");
  if (samples < 1 || validation_draws < 1) throw Error("TrainConfig: draw counts must be >= 1");
  architecture.validate();
  ipm.validate();
}

Json TrainConfig::to_json() const {
  return {{"mode", mode_name(mode)},
          {"alpha_grid", alpha_grid},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_epsilon", adam_epsilon},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"init_range", init_range},
          {"seed", seed},
          {"samples", samples},
          {"validation_draws", validation_draws},
          {"stratified_batches", stratified_batches},
          {"ipm_enabled", ipm_enabled},
          {"censoring_weight", censoring_weight},
          {"time_order_weight", time_order_weight},
          {"architecture", architecture.to_json()},
          {"ipm", ipm.to_json()}};
}

TrainConfig TrainConfig::from_json(const Json& j) { return from_json(j, TrainConfig()); }

TrainConfig TrainConfig::from_json(const Json& j, const TrainConfig& base) {
  TrainConfig c = base;
  try {
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    c.alpha_grid = j.value("alpha_grid", c.alpha_grid);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.init_range = j.value("init_range", c.init_range);
    c.seed = j.value("seed", c.seed);
    c.samples = j.value("samples", c.samples);
    c.validation_draws = j.value("validation_draws", c.validation_draws);
    c.stratified_batches = j.value("stratified_batches", c.stratified_batches);
    c.ipm_enabled = j.value("ipm_enabled", c.ipm_enabled);
    c.censoring_weight = j.value("censoring_weight", c.censoring_weight);
    c.time_order_weight = j.value("time_order_weight", c.time_order_weight);
    if (j.contains("architecture")) {
      Json merged = c.architecture.to_json();
      merged.update(j.at("architecture"));
      c.architecture = Architecture::from_json(merged);
    }
    if (j.contains("ipm")) {
      Json merged = c.ipm.to_json();
      merged.update(j.at("ipm"));
      c.ipm = IpmConfig::from_json(merged);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("invalid TrainConfig JSON: ") + e.what());
  }
  c.validate();
  return c;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state,
               const TrainConfig& config) {
  if (grads.size() != params.size()) throw Error("adam_step: gradient length mismatch");
  for (Eigen::Index i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw Error("adam_step: non-finite gradient at parameter index " + std::to_string(i));
    }
  }
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  if (state.m.size() != params.size()) throw Error("adam_step: state length mismatch");
  ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  state.m = b1 * state.m + (1.0 - b1) * grads;
  state.v = b2 * state.v + (1.0 - b2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  params.array() -= config.learning_rate * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + config.adam_epsilon);
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& treated,
                                                   const std::vector<std::size_t>& control,
                                                   std::size_t batch_size, bool stratified,
                                                   Rng& rng) {
  const std::size_t total = treated.size() + control.size();
  if (total == 0) return {};
  const std::size_t count = (total + batch_size - 1) / batch_size;
  std::vector<std::vector<std::size_t>> batches(count);
  if (stratified) {
    std::vector<std::size_t> t = treated, c = control;
    rng.shuffle(t);
    rng.shuffle(c);
    const auto deal = [&](const std::vector<std::size_t>& v) {
      for (std::size_t b = 0; b < count; ++b) {
        const std::size_t lo = b * v.size() / count, hi = (b + 1) * v.size() / count;
        batches[b].insert(batches[b].end(), v.begin() + static_cast<std::ptrdiff_t>(lo),
                          v.begin() + static_cast<std::ptrdiff_t>(hi));
      }
    };
    deal(t);
    deal(c);
  } else {
    std::vector<std::size_t> all = treated;
    all.insert(all.end(), control.begin(), control.end());
    rng.shuffle(all);
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t lo = b * total / count, hi = (b + 1) * total / count;
      batches[b].assign(all.begin() + static_cast<std::ptrdiff_t>(lo),
                        all.begin() + static_cast<std::ptrdiff_t>(hi));
    }
  }
  return batches;
}

double training_time_scale(const SurvivalDataset& data) {
  std::vector<double> y;
  for (std::size_t i : data.indices(Split::kTrain)) y.push_back(data.outcomes.y[i]);
  if (y.empty()) throw Error("training split is empty");
  std::sort(y.begin(), y.end());
  const std::size_t n = y.size();
  return n % 2 == 1 ? y[n / 2] : 0.5 * (y[n / 2 - 1] + y[n / 2]);
}

namespace {

BatchDraws collect(const Tape& tape, const BatchForward& f, Mode mode, std::span<const double> y,
                   std::span<const int> delta, std::span<const int> arms) {
  BatchDraws b;
  const auto n = static_cast<Eigen::Index>(y.size());
  b.y.assign(y.begin(), y.end());
  b.delta.assign(delta.begin(), delta.end());
  b.a.assign(arms.begin(), arms.end());
  b.latent = tape.value(f.latent);
  const bool point = is_aft(mode);
  if (!point) b.event = Eigen::VectorXd::Zero(n);
  if (has_censor_head(mode)) b.censor = Eigen::VectorXd::Zero(n);
  if (point) {
    b.param_a = Eigen::VectorXd::Zero(n);
    b.param_b = Eigen::VectorXd::Zero(n);
  }
  for (const ArmOutput& o : f.arms) {
    for (std::size_t i = 0; i < o.rows.size(); ++i) {
      const Eigen::Index r = o.rows[i], k = static_cast<Eigen::Index>(i);
      if (point) {
        b.param_a[r] = tape.value(o.param_a)(k, 0);
        b.param_b[r] = tape.value(o.param_b)(k, 0);
      } else {
        b.event[r] = tape.value(o.event)(k, 0);
        if (has_censor_head(mode)) b.censor[r] = tape.value(o.censor)(k, 0);
      }
    }
  }
  return b;
}

RowMatrix gather_column(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i), 0) = v[rows[i]];
  return out;
}

void seed_outputs(Tape& tape, const BatchForward& f, const Objective& obj, Mode mode,
                  bool with_ipm) {
  for (const ArmOutput& o : f.arms) {
    if (!o.present()) continue;
    if (is_aft(mode)) {
      tape.seed(o.param_a, gather_column(obj.grad.d_param_a, o.rows));
      tape.seed(o.param_b, gather_column(obj.grad.d_param_b, o.rows));
    } else {
      tape.seed(o.event, gather_column(obj.grad.d_event, o.rows));
      if (has_censor_head(mode)) tape.seed(o.censor, gather_column(obj.grad.d_censor, o.rows));
    }
  }
  if (with_ipm) tape.seed(f.latent, obj.d_latent);
}

ObjectiveOptions objective_options(double alpha, const TrainConfig& config) {
  ObjectiveOptions o;
  o.alpha = alpha;
  o.ipm = config.ipm;
  o.compute_ipm = config.ipm_enabled;
  o.censoring_weight = config.censoring_weight;
  o.time_order_weight = config.time_order_weight;
  return o;
}

std::uint64_t row_key(const RowMatrix& x, Eigen::Index i, int arm) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFF;
      h *= 1099511628211ULL;
    }
  };
  for (Eigen::Index k = 0; k < x.cols(); ++k) {
    double v = x(i, k);
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    mix(bits);
  }
  mix(static_cast<std::uint64_t>(arm));
  return h;
}

// Per-subject loss of the mode's factual form.
double subject_loss(const BatchDraws& b, std::size_t i, Mode mode, const TrainConfig& config) {
  const auto k = static_cast<Eigen::Index>(i);
  BatchDraws one;
  one.y = {b.y[i]};
  one.delta = {b.delta[i]};
  one.a = {b.a[i]};
  if (b.event.size() != 0) one.event = b.event.segment(k, 1);
  if (b.censor.size() != 0) one.censor = b.censor.segment(k, 1);
  if (b.param_a.size() != 0) {
    one.param_a = b.param_a.segment(k, 1);
    one.param_b = b.param_b.segment(k, 1);
  }
  switch (mode) {
    case Mode::kCsa: return csa_factual_loss(one);
    case Mode::kSr: return sr_loss(one);
    case Mode::kCsaInfo:
      return csa_factual_loss(one) + config.censoring_weight * censoring_loss(one) +
             config.time_order_weight * time_order_loss(one);
    case Mode::kAftLogNormal: return aft_nll(one, AftFamily::kLogNormal);
    case Mode::kAftWeibull: return aft_nll(one, AftFamily::kWeibull);
  }
  return 0.0;
}

}  // namespace

BatchStep batch_gradient(Model& model, const RowMatrix& x, std::span<const int> arms,
                         std::span<const double> y, std::span<const int> delta, Rng& rng,
                         const ObjectiveOptions& options, bool update_running) {
  Tape tape;
  const BatchForward f = update_running
                             ? model.forward(tape, x, arms, Phase::kTrain, rng, true)
                             : std::as_const(model).forward(tape, x, arms, Phase::kTrain, rng);
  const BatchDraws draws = collect(tape, f, model.mode(), y, delta, arms);
  BatchStep out{total_objective(draws, model.mode(), options), {}};
  out.grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.params().size()));
  if (!std::isfinite(out.objective.total)) return out;
  seed_outputs(tape, f, out.objective, model.mode(), options.compute_ipm);
  tape.backward();
  tape.accumulate(model.params(), out.grad);
  return out;
}

double tuple_loss(const Model& model, const RowMatrix& x, std::span<const int> arms,
                  std::span<const double> y, std::span<const int> delta, std::size_t draws,
                  std::uint64_t seed, const TrainConfig& config) {
  const auto n = x.rows();
  if (n == 0) throw Error("tuple_loss: no tuples");
  if (static_cast<Eigen::Index>(arms.size()) != n || static_cast<Eigen::Index>(y.size()) != n ||
      static_cast<Eigen::Index>(delta.size()) != n) {
    throw Error("tuple_loss: inconsistent tuple lengths");
  }
  const Mode mode = model.mode();
  const bool stochastic = mode == Mode::kCsa || mode == Mode::kCsaInfo;
  const std::size_t reps = stochastic ? draws : 1;
  const Eigen::Index dn = model.architecture().noise_dim;
  std::vector<std::uint64_t> keys(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) keys[static_cast<std::size_t>(i)] = row_key(x, i, arms[static_cast<std::size_t>(i)]);

  std::vector<double> per_subject;
  per_subject.reserve(static_cast<std::size_t>(n) * reps);
  for (std::size_t d = 0; d < reps; ++d) {
    RowMatrix event_noise(stochastic ? n : 0, dn), censor_noise(has_censor_head(mode) ? n : 0, dn);
    if (stochastic) {
      // Noise keyed by tuple content, so reordering tuples changes nothing.
      for (Eigen::Index i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed ^ kStreamValidation, d, keys[static_cast<std::size_t>(i)]);
        event_noise.row(i) = model.draw_noise(1, rng);
        if (has_censor_head(mode)) censor_noise.row(i) = model.draw_noise(1, rng);
      }
    }
    Tape tape;
    const BatchForward f = model.forward_eval(tape, x, arms, event_noise, censor_noise);
    const BatchDraws b = collect(tape, f, mode, y, delta, arms);
    for (std::size_t i = 0; i < b.size(); ++i) per_subject.push_back(subject_loss(b, i, mode, config));
  }
  // Fixed summation order independent of tuple order.
  std::sort(per_subject.begin(), per_subject.end());
  double sum = 0.0;
  for (double v : per_subject) sum += v;
  return sum / static_cast<double>(per_subject.size());
}

namespace {

struct Tuples {
  RowMatrix x;
  std::vector<int> a;
  std::vector<double> y;
  std::vector<int> delta;
};

Tuples split_tuples(const SurvivalDataset& data, Split s) {
  Tuples t;
  const auto idx = data.indices(s);
  t.x.resize(static_cast<Eigen::Index>(idx.size()), data.x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    t.x.row(static_cast<Eigen::Index>(i)) = data.x.row(static_cast<Eigen::Index>(idx[i]));
    t.a.push_back(data.outcomes.a[idx[i]]);
    t.y.push_back(data.outcomes.y[idx[i]]);
    t.delta.push_back(data.outcomes.delta[idx[i]]);
  }
  return t;
}

}  // namespace

ValidationLoss validation_objective(const Model& model, const SurvivalDataset& data,
                                    const std::vector<ProxyCounterfactual>& proxies,
                                    const TrainConfig& config) {
  const auto valid = data.indices(Split::kValid);
  if (valid.empty()) throw Error("validation_objective: validation split is empty");
  if (proxies.size() != valid.size()) {
    throw Error("validation_objective: missing proxy counterfactuals for the validation split");
  }
  const Tuples f = split_tuples(data, Split::kValid);
  Tuples cf;
  cf.x.resize(static_cast<Eigen::Index>(proxies.size()), data.x.cols());
  for (std::size_t i = 0; i < proxies.size(); ++i) {
    const auto& p = proxies[i];
    if (p.subject >= data.size()) throw Error("validation_objective: proxy subject out of range");
    cf.x.row(static_cast<Eigen::Index>(i)) = data.x.row(static_cast<Eigen::Index>(p.subject));
    cf.a.push_back(1 - data.outcomes.a[p.subject]);
    cf.y.push_back(p.y_cf);
    cf.delta.push_back(p.delta_cf);
  }
  ValidationLoss out;
  out.factual = tuple_loss(model, f.x, f.a, f.y, f.delta, config.validation_draws, config.seed, config);
  out.counterfactual =
      tuple_loss(model, cf.x, cf.a, cf.y, cf.delta, config.validation_draws, config.seed, config);
  out.total = out.factual + out.counterfactual;
  return out;
}

TrainResult train_one(const SurvivalDataset& data, Mode mode, double alpha,
                      const TrainConfig& config) {
  config.validate();
  const auto train_idx = data.indices(Split::kTrain);
  if (train_idx.size() < 2) throw Error("train_one: training split needs at least 2 records");
  if (data.indices(Split::kValid).empty()) throw Error("train_one: validation split is empty");

  TrainResult result{Model(mode, data.x.cols(), config.architecture, training_time_scale(data)),
                     {}, 0, 0, 0};
  Model& model = result.model;
  model.initialize(config.seed, config.init_range);

  std::vector<std::size_t> treated, control;
  for (std::size_t i : train_idx) (data.outcomes.a[i] == 1 ? treated : control).push_back(i);
  const Tuples valid = split_tuples(data, Split::kValid);
  const ObjectiveOptions options = objective_options(alpha, config);

  AdamState adam;
  double best = std::numeric_limits<double>::infinity();
  Model best_model = model;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    Rng rng = Rng::substream(config.seed, kStreamEpoch, epoch);
    const auto batches = make_batches(treated, control, config.batch_size, config.stratified_batches, rng);
    EpochRecord rec;
    rec.epoch = epoch;
    for (const auto& batch : batches) {
      RowMatrix xb(static_cast<Eigen::Index>(batch.size()), data.x.cols());
      std::vector<int> arms, delta;
      std::vector<double> y;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = data.x.row(static_cast<Eigen::Index>(batch[i]));
        arms.push_back(data.outcomes.a[batch[i]]);
        y.push_back(data.outcomes.y[batch[i]]);
        delta.push_back(data.outcomes.delta[batch[i]]);
      }
      BatchStep step = batch_gradient(model, xb, arms, y, delta, rng, options, true);
      const Objective& obj = step.objective;
      if (!std::isfinite(obj.total)) {
        throw Error("training diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
      }
      if (obj.ipm_empty_group) ++result.empty_group_batches;
      adam_step(model.params().values(), step.grad, adam, config);

      const double w = static_cast<double>(batch.size()) / static_cast<double>(train_idx.size());
      rec.factual[0] += w * obj.factual[0];
      rec.factual[1] += w * obj.factual[1];
      rec.ipm += w * obj.ipm;
      rec.censoring += w * obj.censoring;
      rec.time_order += w * obj.time_order;
      rec.total += w * obj.total;
    }
    rec.valid_factual = tuple_loss(model, valid.x, valid.a, valid.y, valid.delta,
                                   config.validation_draws, config.seed, config);
    if (!std::isfinite(rec.valid_factual)) {
      throw Error("training diverged at epoch " + std::to_string(epoch) + " (validation loss)");
    }
    result.curve.push_back(rec);
    result.epochs_run = epoch;
    if (rec.valid_factual < best) {
      best = rec.valid_factual;
      best_model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.model = std::move(best_model);
  return result;
}

Json TrainReport::to_json(const TrainConfig& config) const {
  Json cands = Json::array();
  for (const auto& c : candidates) {
    Json e = {{"alpha", c.alpha},
              {"diverged", c.diverged},
              {"epochs_run", c.epochs_run},
              {"best_epoch", c.best_epoch}};
    if (c.diverged) {
      e["error"] = c.error;
    } else {
      e["valid_factual"] = c.valid.factual;
      e["valid_counterfactual"] = c.valid.counterfactual;
      e["valid_total"] = c.valid.total;
    }
    cands.push_back(std::move(e));
  }
  return {{"schema_version", kSchemaVersion},
          {"mode", mode_name(mode)},
          {"chosen_alpha", chosen_alpha},
          {"time_scale", time_scale},
          {"candidates", cands},
          {"config", config.to_json()}};
}

std::string TrainReport::curves_csv() const {
  std::ostringstream out;
  out << "epoch,mode,alpha,factual_a0,factual_a1,ipm,censoring,time_order,total,valid_factual\n";
  for (const auto& c : candidates) {
    for (const auto& r : c.curve) {
      out << r.epoch << ',' << mode_name(mode) << ',' << format_double(c.alpha) << ','
          << format_double(r.factual[0]) << ',' << format_double(r.factual[1]) << ','
          << format_double(r.ipm) << ',' << format_double(r.censoring) << ','
          << format_double(r.time_order) << ',' << format_double(r.total) << ','
          << format_double(r.valid_factual) << '\n';
    }
  }
  return out.str();
}

std::size_t select_candidate(const std::vector<CandidateReport>& candidates) {
  std::size_t best = candidates.size();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (c.diverged) continue;
    if (best == candidates.size() || c.valid.total < candidates[best].valid.total ||
        (c.valid.total == candidates[best].valid.total && c.alpha < candidates[best].alpha)) {
      best = i;
    }
  }
  if (best == candidates.size()) throw Error("alpha grid search: every candidate diverged");
  return best;
}

std::size_t thread_budget() {
  if (const char* env = std::getenv("CSA_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

GridResult alpha_grid_search(const SurvivalDataset& data, const TrainConfig& config,
                             std::size_t threads) {
  config.validate();
  const auto proxies = nn_proxy_counterfactuals(data, Split::kValid);
  const std::size_t k = config.alpha_grid.size();
  std::vector<CandidateReport> reports(k);
  std::vector<std::optional<Model>> models(k);

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < k; i = next++) {
      CandidateReport& r = reports[i];
      r.alpha = config.alpha_grid[i];
      try {
        TrainResult t = train_one(data, config.mode, r.alpha, config);
        r.valid = validation_objective(t.model, data, proxies, config);
        if (!std::isfinite(r.valid.total)) throw Error("non-finite validation loss");
        r.epochs_run = t.epochs_run;
        r.best_epoch = t.best_epoch;
        r.curve = std::move(t.curve);
        models[i] = std::move(t.model);
      } catch (const Error& e) {
        r.diverged = true;
        r.error = e.what();
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(threads, 1, k);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  TrainReport report;
  report.mode = config.mode;
  report.time_scale = training_time_scale(data);
  report.chosen_index = select_candidate(reports);
  report.chosen_alpha = reports[report.chosen_index].alpha;
  report.candidates = std::move(reports);
  Model chosen = std::move(*models[report.chosen_index]);
  return {std::move(report), std::move(chosen)};
}

}  // namespace csa
