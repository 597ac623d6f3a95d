#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtml/tasks.hpp"
#include "mtml/trainers.hpp"

namespace mtml {

enum class Paradigm { Single, Mtl, MtlFinetune, Mtml, MtmlFinetune };
std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& s);

struct ExperimentSpec {
  std::string id;  // e.g. "4.3"
  Paradigm paradigm = Paradigm::Single;
  std::vector<TaskId> trained;
  std::vector<TaskId> added;  // empty unless paradigm is a finetune variant
  FinetuneMode finetune_mode = FinetuneMode::AllParams;
  bool allow_two_sources = false;  // meta-training on two source tasks
};

// Everything that affects a run's numbers, plus the seed list and output
// location. The config hash covers all of it.
struct HarnessConfig {
  std::uint64_t world_seed = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double noise_std = 0.0;
  int d_in = 8;
  int d_z = 16;
  int num_classes = 4;
  int n_train = 1024;
  int n_val = 256;
  int n_test = 512;
  TrainConfig train;
  std::string out_dir = "out";

  WorldConfig world_config() const;
  std::string to_json_string() const;  // canonical (sorted keys)
  static HarnessConfig from_json_string(const std::string& text);
  static HarnessConfig from_json_file(const std::string& path);
  std::string config_hash() const;  // 16 hex digits, FNV-1a of the canonical dump
};

struct GridManifest {
  std::vector<ExperimentSpec> specs;
  HarnessConfig config;
  std::string created_at;
  std::string config_hash;
};

// The experiment families of the study: single-task baselines, joint
// multi-task, multi-task with task addition, meta-trained with task addition,
// and the three leave-one-out families.
GridManifest default_grid(const HarnessConfig& cfg);

void write_manifest(const GridManifest& manifest, const std::string& path);
GridManifest load_manifest(const std::string& path);
void print_grid_table(const GridManifest& manifest, std::ostream& os);

// --- run documents ------------------------------------------------------

std::string run_report_to_json(const RunReport& report);
RunReport run_report_from_json(const std::string& text);

struct RunDocument {
  std::string exp_id;
  std::string paradigm;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string finetune_mode;
  RunReport report;
};

std::string run_document_to_json(const RunDocument& doc);
RunDocument run_document_from_json(const std::string& text);

// --- execution ------------------------------------------------------------

struct GridResult {
  int completed = 0;
  int skipped = 0;
  int failed = 0;
};

// Executes every spec x seed whose id starts with `filter` (empty = all).
// Existing run files with a matching config hash are skipped unless force.
// jobs > 1 runs independent (spec, seed) pairs on a worker pool; results are
// identical to a serial run. Returns nonzero counts in `failed` when runs
// diverge; the caller maps that to an exit code.
GridResult run_grid(const GridManifest& manifest, const std::string& filter,
                    bool force, int jobs, std::ostream& log);

// Executes one spec at one seed against prebuilt splits (the harness builds
// splits deterministically per world seed, so every run sees identical data).
// final_params, when given, receives the trained parameters for
// checkpointing.
RunDocument execute_spec(const ExperimentSpec& spec, std::uint64_t seed,
                         const Splits& splits, const HarnessConfig& cfg,
                         ParamSet* final_params = nullptr);

// --- reporting ------------------------------------------------------------

// Renders report/aggregate.csv (one row per exp, seed, task, metric),
// report/summary.csv and report/summary.txt (mean +/- std over seeds, "-" for
// absent tasks), report/epochs.csv (training vs fine-tune epochs), and
// text sparkline curves per experiment. Returns false when no runs exist.
bool write_report(const std::string& out_dir, std::ostream& os);

}  // namespace mtml
