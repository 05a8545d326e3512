#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "msr/experiment.hpp"
#include "msr/synth_bench.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> seeds;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> val_size;
  std::optional<std::string> method;
};

void add_experiment_options(CLI::App* cmd, Overrides& o, bool with_method) {
  cmd->add_option("config", o.config, "experiment config file")->required();
  cmd->add_option("--seeds", o.seeds, "seed list, e.g. 0,1,2 or 0-4");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--workers", o.workers, "parallel seeds");
  cmd->add_option("--val-size", o.val_size, "validation subsample size");
  if (with_method) cmd->add_option("--method", o.method, "msr, ft-wl, ft-wlst or majority");
}

int load_and_run(const Overrides& o, int (*command)(const msr::ExperimentConfig&)) {
  msr::ExperimentConfig cfg;
  try {
    cfg = msr::load_config(o.config);
    if (o.seeds) cfg.seeds = msr::parse_seed_list(*o.seeds);
    if (o.out) cfg.output = *o.out;
    if (o.workers) cfg.workers = *o.workers;
    if (o.val_size) cfg.validation_size = *o.val_size;
    if (o.method) cfg.method = *o.method;
    cfg.validate();
  } catch (const msr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  return command(cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weak-supervision training experiments"};
  app.require_subcommand(1);

  Overrides run_opts, ablate_opts;
  auto* run = app.add_subcommand("run", "train one method over several seeds");
  add_experiment_options(run, run_opts, true);
  auto* ablate = app.add_subcommand("ablate", "scheduler/filter ablation grid");
  add_experiment_options(ablate, ablate_opts, false);

  std::string spec_path, gen_out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  gen->add_option("spec", spec_path, "key = value synth spec")->required();
  gen->add_option("output", gen_out, "output .jsonl")->required();

  std::string stats_path;
  auto* stats = app.add_subcommand("stats", "corpus statistics as JSON");
  stats->add_option("data", stats_path, "corpus .jsonl")->required();

  CLI11_PARSE(app, argc, argv);

  if (*run) return load_and_run(run_opts, msr::run_command);
  if (*ablate) return load_and_run(ablate_opts, msr::ablate_command);
  try {
    if (*gen) {
      auto spec = msr::parse_synth_spec(msr::KeyValues::load(spec_path));
      msr::save_dataset(msr::generate(spec), gen_out);
      return 0;
    }
    auto ds = msr::load_dataset(stats_path);
    std::cout << msr::describe(ds).to_json().dump(2) << '\n';
  } catch (const msr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
