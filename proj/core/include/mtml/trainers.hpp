#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtml/episodes.hpp"
#include "mtml/meta.hpp"
#include "mtml/network.hpp"
#include "mtml/objectives.hpp"
#include "mtml/optim.hpp"

namespace mtml {

// Patience-based early stopping over validation losses. A task stops when its
// own loss has not improved for task_patience epochs (its head freezes from
// that epoch on); the run stops when the summed loss has not improved for
// global_patience epochs. Improvement means strictly lower.
class StopState {
 public:
  StopState(std::vector<TaskId> tasks, int task_patience, int global_patience);

  struct Update {
    std::vector<TaskId> newly_stopped;
    bool global_stop = false;
  };
  // Feed the per-task validation losses for a 1-based epoch index.
  Update observe(int epoch, const std::map<TaskId, double>& val_losses);

  const std::set<TaskId>& stopped() const { return stopped_; }
  int best_global_epoch() const { return best_global_epoch_; }

 private:
  struct Best {
    double value = 0.0;
    int epoch = 0;
    bool seen = false;
  };
  std::vector<TaskId> tasks_;
  int task_patience_;
  int global_patience_;
  std::map<TaskId, Best> task_best_;
  Best global_best_;
  int best_global_epoch_ = 0;
  std::set<TaskId> stopped_;
};

struct TrainConfig {
  NetConfig net = NetConfig::defaults();
  AdamWConfig adamw;                  // shared by every paradigm
  MetaConfig meta;                    // inner loop settings
  int support_size = 16;
  int query_size = 16;
  int k_per_combo = 1;
  int max_epochs = 2000;
  int max_meta_epochs = 600;
  int task_patience = 35;
  int global_patience = 50;
  bool uncertainty_weighting = true;  // false clamps every logvar at 0
  bool allow_two_source_tasks = false;
};

struct EpochRecord {
  int epoch = 0;
  std::map<TaskId, double> train_loss;
  std::map<TaskId, double> val_loss;
  MetricReport train_metrics;
  MetricReport val_metrics;
  double meta_val_proxy = 0.0;  // meta runs: mean adapted query loss on held-out episodes
  int meta_episodes = 0;        // meta runs: episodes visited this meta-epoch
  double meta_query_loss = 0.0;  // meta runs: summed query loss of the outer step
  double meta_grad_norm = 0.0;   // meta runs: norm of the accumulated meta-gradient
};

struct RunReport {
  std::string paradigm;  // "single" | "mtl" | "mtml" | "finetune"
  std::vector<TaskId> trained_tasks;
  std::vector<TaskId> finetuned_tasks;
  std::vector<EpochRecord> epochs;           // training phase
  std::vector<EpochRecord> finetune_epochs;  // fine-tune phase, when present
  int epochs_total = 0;
  int epochs_finetune = 0;
  std::optional<MetricReport> test_pre_finetune;
  MetricReport test;  // computed exactly once, on the shared test split
  std::uint64_t seed = 0;
  std::uint64_t splits_hash = 0;
  bool failed = false;
  std::string failure;
};

struct TrainResult {
  ParamSet params;
  RunReport report;
};

// HeadsOnly: new heads train on the new tasks' losses; trunk and old heads
// frozen. TargetOnly: new tasks' losses only, but the trunk adapts with them
// (old heads untouched). AllParams: every task's loss, every parameter.
enum class FinetuneMode { HeadsOnly, TargetOnly, AllParams };
std::string to_string(FinetuneMode mode);
FinetuneMode finetune_mode_from_string(const std::string& s);

TrainResult train_single(TaskId task, const Splits& splits, const TrainConfig& cfg,
                         std::uint64_t seed);

TrainResult train_mtl(const std::vector<TaskId>& tasks, const Splits& splits,
                      const TrainConfig& cfg, std::uint64_t seed);

// Meta-training over the full combo family of the source tasks. Validation is
// a query-loss proxy on held-out episodes drawn once from the val split;
// global patience applies to that proxy. Requires at least three source
// tasks unless cfg.allow_two_source_tasks is set.
TrainResult meta_train(const std::vector<TaskId>& source_tasks, const Splits& splits,
                       const TrainConfig& cfg, std::uint64_t seed);

// Fine-tunes a trained ParamSet after adding fresh heads for new_tasks (seeded
// base_seed xor task index). HeadsOnly trains only the new heads on the new
// tasks' losses; AllParams trains everything on all tasks. new_tasks may be
// empty in AllParams mode (pure refinement of the trained tasks).
TrainResult finetune(const ParamSet& trained, const std::vector<TaskId>& train_tasks,
                     const std::vector<TaskId>& new_tasks, FinetuneMode mode,
                     const Splits& splits, const TrainConfig& cfg, std::uint64_t seed);

// Stitches a training-phase report and a fine-tune report into one document.
RunReport merge_finetune(RunReport train_phase, const RunReport& finetune_phase);

}  // namespace mtml
