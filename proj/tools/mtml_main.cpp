// Command-line front end: builds experiment grids, runs them, renders
// reports, and exposes small inspection utilities (combo tables, batch
// export).
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "mtml/harness.hpp"

namespace {

using namespace mtml;

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw CLI::ValidationError("--seeds", "empty seed list");
  return seeds;
}

std::vector<TaskId> parse_task_list(const std::string& text) {
  std::vector<TaskId> tasks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) tasks.push_back(task_from_string(item));
  }
  return tasks;
}

struct CommonFlags {
  std::string config_file;
  std::string out_dir;
  std::string seeds;
  std::uint64_t world_seed = 0;
  double noise = -1.0;
  double inner_lr = -1.0;
  double outer_lr = -1.0;
  std::string inner_scope;
  std::string finetune_mode;
  int n_train = 0;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "JSON config file (flags override it)");
    app->add_option("--out", out_dir, "output directory");
    app->add_option("--seeds", seeds, "comma-separated run seeds, e.g. 1,2,3");
    app->add_option("--world-seed", world_seed, "synthetic world seed");
    app->add_option("--noise", noise, "target noise std for the synthetic world");
    app->add_option("--inner-lr", inner_lr, "inner-loop SGD learning rate");
    app->add_option("--outer-lr", outer_lr, "AdamW learning rate");
    app->add_option("--inner-scope", inner_scope,
                    "inner adaptation scope: trunk_and_heads | heads_only");
    app->add_option("--finetune-mode", finetune_mode,
                    "heads_only | target_only | all_params");
    app->add_option("--n-train", n_train, "training split rows");
  }

  HarnessConfig resolve(const CLI::App* app) const {
    HarnessConfig cfg;
    if (!config_file.empty()) cfg = HarnessConfig::from_json_file(config_file);
    if (app->count("--out")) cfg.out_dir = out_dir;
    if (app->count("--seeds")) cfg.seeds = parse_seed_list(seeds);
    if (app->count("--world-seed")) cfg.world_seed = world_seed;
    if (app->count("--noise")) cfg.noise_std = noise;
    if (app->count("--inner-lr")) cfg.train.meta.inner_lr = inner_lr;
    if (app->count("--outer-lr")) cfg.train.adamw.lr = outer_lr;
    if (app->count("--inner-scope")) {
      cfg.train.meta.inner_scope = inner_scope == "heads_only"
                                       ? InnerScope::HeadsOnly
                                       : InnerScope::TrunkAndHeads;
    }
    if (app->count("--n-train")) cfg.n_train = n_train;
    return cfg;
  }

  void apply_finetune_mode(GridManifest& manifest) const {
    if (finetune_mode.empty()) return;
    FinetuneMode mode = finetune_mode_from_string(finetune_mode);
    for (auto& spec : manifest.specs) spec.finetune_mode = mode;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task meta-learning experiment engine"};
  app.require_subcommand(1);

  auto* grid_cmd = app.add_subcommand("grid", "write and print the default grid");
  CommonFlags grid_flags;
  grid_flags.attach(grid_cmd);

  auto* run_cmd = app.add_subcommand("run", "execute experiments");
  CommonFlags run_flags;
  run_flags.attach(run_cmd);
  std::string grid_file, filter;
  bool force = false;
  int jobs = 1;
  run_cmd->add_option("--grid", grid_file, "grid manifest (default: built-in grid)");
  run_cmd->add_option("--filter", filter, "run only experiment ids with this prefix");
  run_cmd->add_flag("--force", force, "re-run even when results are up to date");
  run_cmd->add_option("--jobs", jobs, "worker threads (0 = hardware threads)");

  auto* report_cmd = app.add_subcommand("report", "render tables from finished runs");
  std::string report_out = "out";
  report_cmd->add_option("--out", report_out, "output directory of a previous run");

  auto* combos_cmd =
      app.add_subcommand("combos", "print the multi-task episode combinations");
  std::string combo_tasks = "T1,T2,T3,T4";
  combos_cmd->add_option("--tasks", combo_tasks, "comma-separated source tasks");

  auto* export_cmd =
      app.add_subcommand("export-batch", "write a sampled batch as columnar text");
  std::uint64_t ex_world_seed = 1, ex_seed = 1;
  double ex_noise = 0.0;
  int ex_rows = 32;
  std::string ex_out;
  export_cmd->add_option("--world-seed", ex_world_seed, "synthetic world seed");
  export_cmd->add_option("--seed", ex_seed, "batch sampling seed");
  export_cmd->add_option("--noise", ex_noise, "target noise std");
  export_cmd->add_option("--rows", ex_rows, "number of samples");
  export_cmd->add_option("--out", ex_out, "output file (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (grid_cmd->parsed()) {
      HarnessConfig cfg = grid_flags.resolve(grid_cmd);
      GridManifest manifest = default_grid(cfg);
      grid_flags.apply_finetune_mode(manifest);
      std::filesystem::create_directories(cfg.out_dir);
      write_manifest(manifest, cfg.out_dir + "/grid.json");
      print_grid_table(manifest, std::cout);
      std::cout << "manifest written to " << cfg.out_dir << "/grid.json\n";
      return 0;
    }

    if (run_cmd->parsed()) {
      HarnessConfig cfg = run_flags.resolve(run_cmd);
      GridManifest manifest;
      if (!grid_file.empty()) {
        manifest = load_manifest(grid_file);
        if (run_cmd->count("--out")) manifest.config.out_dir = cfg.out_dir;
      } else {
        manifest = default_grid(cfg);
      }
      run_flags.apply_finetune_mode(manifest);
      if (jobs == 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
      GridResult r = run_grid(manifest, filter, force, jobs, std::cout);
      std::cout << r.completed << " completed, " << r.skipped << " skipped, "
                << r.failed << " failed\n";
      write_report(manifest.config.out_dir, std::cout);
      return r.failed == 0 ? 0 : 1;
    }

    if (report_cmd->parsed()) {
      return write_report(report_out, std::cout) ? 0 : 1;
    }

    if (combos_cmd->parsed()) {
      ComboFamily family = generate_combos(parse_task_list(combo_tasks));
      print_combo_table(family, std::cout);
      return 0;
    }

    if (export_cmd->parsed()) {
      WorldConfig wc;
      wc.seed = ex_world_seed;
      wc.noise_std = ex_noise;
      WorldFn world(wc);
      Batch batch = sample_batch(world, all_task_specs(), ex_rows, ex_seed);
      if (ex_out.empty()) {
        write_batch_columnar(batch, std::cout);
      } else {
        std::ofstream f(ex_out);
        if (!f) throw std::runtime_error("cannot write " + ex_out);
        write_batch_columnar(batch, f);
        std::cout << ex_rows << " rows written to " << ex_out << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
