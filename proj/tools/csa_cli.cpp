#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "csa/pipeline.h"

namespace {

struct Overrides {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string modes;
  std::string baselines;
  std::optional<std::size_t> bootstrap;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment config JSON")->required();
  cmd->add_option("--out", o.out, "Output directory (overrides the config)");
  cmd->add_option("--seed", o.seed, "Experiment seed");
  cmd->add_option("--modes", o.modes, "Comma-separated modes, e.g. CSA,CSA-INFO,AFT-LN,AFT-W,SR");
}

void add_eval_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--baselines", o.baselines, "Comma-separated CoxPH weightings: uniform,ipw,ow");
  cmd->add_option("--bootstrap", o.bootstrap, "Bootstrap resamples for HR intervals");
}

csa::ExperimentConfig load(const Overrides& o) {
  csa::ExperimentConfig c = csa::load_experiment(o.config);
  if (!o.out.empty()) c.output = o.out;
  if (o.seed) c.seed = *o.seed;
  if (!o.modes.empty()) c.modes = csa::parse_modes(o.modes);
  if (!o.baselines.empty()) {
    c.baselines.clear();
    std::stringstream ss(o.baselines);
    for (std::string item; std::getline(ss, item, ',');) {
      if (!item.empty()) c.baselines.push_back(csa::parse_scheme(item));
    }
  }
  if (o.bootstrap) c.metrics.bootstrap = *o.bootstrap;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Counterfactual survival analysis toolkit"};
  app.require_subcommand(1);

  std::string sim_config, sim_out = "data";
  std::optional<std::uint64_t> sim_seed;
  auto* simulate = app.add_subcommand("simulate", "Simulate a cohort with hidden potential outcomes");
  simulate->add_option("--config", sim_config, "Simulator JSON, or a preset: actg_synthetic, null_effect")
      ->required();
  simulate->add_option("--out", sim_out, "Output directory");
  simulate->add_option("--seed", sim_seed, "Simulation seed");

  Overrides train_o, eval_o, repro_o;
  auto* train = app.add_subcommand("train", "Train every configured mode over its alpha grid");
  add_common(train, train_o);
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate trained checkpoints on the test split");
  add_common(evaluate, eval_o);
  add_eval_flags(evaluate, eval_o);
  auto* reproduce = app.add_subcommand("reproduce", "Simulate, train, evaluate and compare");
  add_common(reproduce, repro_o);
  add_eval_flags(reproduce, repro_o);

  std::vector<std::string> reports;
  std::string compare_out = ".";
  auto* compare = app.add_subcommand("compare", "Tabulate metrics reports");
  compare->add_option("reports", reports, "metrics.json files")->required();
  compare->add_option("--out", compare_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      csa::SimConfig c;
      if (sim_config == "actg_synthetic") {
        c = csa::SimConfig::actg_synthetic();
      } else if (sim_config == "null_effect") {
        c = csa::SimConfig::null_effect();
      } else {
        c = csa::SimConfig::from_json(csa::read_json(sim_config));
      }
      if (sim_seed) c.seed = *sim_seed;
      csa::cmd_simulate(c, sim_out, std::cout);
    } else if (*train) {
      csa::cmd_train(load(train_o), std::cout);
    } else if (*evaluate) {
      csa::cmd_evaluate(load(eval_o), std::cout);
    } else if (*reproduce) {
      csa::cmd_reproduce(load(repro_o), std::cout);
    } else if (*compare) {
      std::vector<csa::fs::path> paths(reports.begin(), reports.end());
      csa::cmd_compare(paths, compare_out, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
