#include "mtml/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtml {

StopState::StopState(std::vector<TaskId> tasks, int task_patience, int global_patience)
    : tasks_(std::move(tasks)),
      task_patience_(task_patience),
      global_patience_(global_patience) {}

StopState::Update StopState::observe(int epoch, const std::map<TaskId, double>& val_losses) {
  Update upd;
  double sum = 0.0;
  for (TaskId t : tasks_) sum += val_losses.at(t);

  for (TaskId t : tasks_) {
    if (stopped_.count(t)) continue;
    Best& b = task_best_[t];
    double loss = val_losses.at(t);
    if (!b.seen || loss < b.value) {
      b = {loss, epoch, true};
    } else if (epoch - b.epoch >= task_patience_) {
      stopped_.insert(t);
      upd.newly_stopped.push_back(t);
    }
  }

  if (!global_best_.seen || sum < global_best_.value) {
    global_best_ = {sum, epoch, true};
    best_global_epoch_ = epoch;
  } else if (epoch - global_best_.epoch >= global_patience_) {
    upd.global_stop = true;
  }
  return upd;
}

std::string to_string(FinetuneMode mode) {
  switch (mode) {
    case FinetuneMode::HeadsOnly: return "heads_only";
    case FinetuneMode::TargetOnly: return "target_only";
    case FinetuneMode::AllParams: return "all_params";
  }
  return "?";
}

FinetuneMode finetune_mode_from_string(const std::string& s) {
  if (s == "heads_only") return FinetuneMode::HeadsOnly;
  if (s == "target_only") return FinetuneMode::TargetOnly;
  if (s == "all_params") return FinetuneMode::AllParams;
  throw std::invalid_argument("unknown finetune mode: " + s);
}

namespace {

UpdateScope joint_scope(const std::vector<TaskId>& tasks, bool trunk, bool uncertainty) {
  UpdateScope scope;
  scope.trunk = trunk;
  scope.heads.insert(tasks.begin(), tasks.end());
  if (uncertainty) scope.logvars.insert(tasks.begin(), tasks.end());
  return scope;
}

struct PhaseOutcome {
  std::vector<EpochRecord> log;
  int epochs = 0;
  bool failed = false;
  std::string failure;
};

// Full-batch AdamW training on the uncertainty-combined loss of
// objective_tasks, with task-wise and global early stopping. One epoch is one
// pass over the train split.
PhaseOutcome joint_train_loop(ParamSet& params, const std::vector<TaskId>& objective_tasks,
                              const UpdateScope& scope, const Splits& splits,
                              const TrainConfig& cfg) {
  AdamW opt(cfg.adamw);
  StopState stop(objective_tasks, cfg.task_patience, cfg.global_patience);
  PhaseOutcome out;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    try {
      params.zero_grad();
      Tensor loss = training_loss(params, splits.train, objective_tasks);
      backward(loss);
      params.clear_frozen_grads();
      opt.step(params, scope);
      params.zero_grad();
    } catch (const std::runtime_error& e) {
      out.failed = true;
      out.failure = e.what();
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = task_loss_values(params, splits.train, objective_tasks);
    rec.val_loss = task_loss_values(params, splits.val, objective_tasks);
    rec.train_metrics = evaluate(params, splits.train, objective_tasks);
    rec.val_metrics = evaluate(params, splits.val, objective_tasks);
    out.epochs = epoch;

    auto upd = stop.observe(epoch, rec.val_loss);
    for (TaskId t : upd.newly_stopped) params.frozen.insert(t);
    out.log.push_back(std::move(rec));
    if (upd.global_stop) break;
  }
  return out;
}

RunReport phase_report(const char* paradigm, const std::vector<TaskId>& trained,
                       PhaseOutcome&& out, const ParamSet& params, const Splits& splits,
                       std::uint64_t seed) {
  RunReport rep;
  rep.paradigm = paradigm;
  rep.trained_tasks = trained;
  rep.epochs = std::move(out.log);
  rep.epochs_total = out.epochs;
  rep.failed = out.failed;
  rep.failure = out.failure;
  rep.seed = seed;
  rep.splits_hash = hash_splits(splits);
  if (!rep.failed) {
    rep.test = evaluate(params, splits.test, trained);
  }
  return rep;
}

}  // namespace

TrainResult train_single(TaskId task, const Splits& splits, const TrainConfig& cfg,
                         std::uint64_t seed) {
  std::vector<TaskId> tasks = {task};
  ParamSet params = init_params(cfg.net, tasks, seed);
  auto out = joint_train_loop(params, tasks,
                              joint_scope(tasks, true, cfg.uncertainty_weighting),
                              splits, cfg);
  RunReport rep = phase_report("single", tasks, std::move(out), params, splits, seed);
  return {std::move(params), std::move(rep)};
}

TrainResult train_mtl(const std::vector<TaskId>& tasks, const Splits& splits,
                      const TrainConfig& cfg, std::uint64_t seed) {
  if (tasks.size() < 2) {
    throw std::invalid_argument("train_mtl: need at least 2 tasks");
  }
  ParamSet params = init_params(cfg.net, tasks, seed);
  auto out = joint_train_loop(params, tasks,
                              joint_scope(tasks, true, cfg.uncertainty_weighting),
                              splits, cfg);
  RunReport rep = phase_report("mtl", tasks, std::move(out), params, splits, seed);
  return {std::move(params), std::move(rep)};
}

TrainResult meta_train(const std::vector<TaskId>& source_tasks, const Splits& splits,
                       const TrainConfig& cfg, std::uint64_t seed) {
  if (source_tasks.size() < 2) {
    throw std::invalid_argument("meta_train: need at least 2 source tasks");
  }
  if (source_tasks.size() == 2 && !cfg.allow_two_source_tasks) {
    throw std::invalid_argument(
        "meta_train: 2 source tasks give a single learning episode, insufficient for "
        "meta-training; set allow_two_source_tasks to override");
  }
  ParamSet params = init_params(cfg.net, source_tasks, seed);
  ComboFamily family = generate_combos(source_tasks);
  AdamW opt(cfg.adamw);
  MetaConfig meta = cfg.meta;
  meta.update_logvars = cfg.uncertainty_weighting;

  // Held-out episodes for the validation proxy, drawn once from the val split.
  std::vector<Episode> val_eps = meta_batch(family, 1, splits.val, cfg.support_size,
                                            cfg.query_size, mix_seed(seed, "meta-val"));

  RunReport rep;
  rep.paradigm = "mtml";
  rep.trained_tasks = source_tasks;
  rep.seed = seed;
  rep.splits_hash = hash_splits(splits);

  double best_proxy = 0.0;
  int best_epoch = 0;
  bool have_best = false;
  for (int epoch = 1; epoch <= cfg.max_meta_epochs; ++epoch) {
    try {
      auto eps = meta_batch(family, cfg.k_per_combo, splits.train, cfg.support_size,
                            cfg.query_size,
                            mix_seed(seed, static_cast<std::uint64_t>(epoch)));
      const int n_eps = static_cast<int>(eps.size());
      MetaStepReport step = outer_step(params, opt, eps, meta);

      double proxy = 0.0;
      for (const Episode& vep : val_eps) {
        ParamSet adapted = inner_adapt(params, vep, meta);
        proxy += training_loss_value(adapted, vep.query, vep.combo.tasks);
      }
      proxy /= static_cast<double>(val_eps.size());

      EpochRecord rec;
      rec.epoch = epoch;
      rec.meta_val_proxy = proxy;
      rec.meta_episodes = n_eps;
      rec.meta_query_loss = step.total_query_loss;
      rec.meta_grad_norm = step.grad_norm;
      rec.train_loss = task_loss_values(params, splits.train, source_tasks);
      rec.val_loss = task_loss_values(params, splits.val, source_tasks);
      rec.val_metrics = evaluate(params, splits.val, source_tasks);
      rep.epochs.push_back(std::move(rec));
      rep.epochs_total = epoch;

      if (!have_best || proxy < best_proxy) {
        best_proxy = proxy;
        best_epoch = epoch;
        have_best = true;
      } else if (epoch - best_epoch >= cfg.global_patience) {
        break;
      }
    } catch (const std::runtime_error& e) {
      rep.failed = true;
      rep.failure = e.what();
      break;
    }
  }
  if (!rep.failed) {
    rep.test = evaluate(params, splits.test, source_tasks);
  }
  return {std::move(params), std::move(rep)};
}

TrainResult finetune(const ParamSet& trained, const std::vector<TaskId>& train_tasks,
                     const std::vector<TaskId>& new_tasks, FinetuneMode mode,
                     const Splits& splits, const TrainConfig& cfg, std::uint64_t seed) {
  for (TaskId t : new_tasks) {
    if (std::find(train_tasks.begin(), train_tasks.end(), t) != train_tasks.end()) {
      throw std::invalid_argument("finetune: " + to_string(t) +
                                  " is both trained and new");
    }
  }
  if (mode != FinetuneMode::AllParams && new_tasks.empty()) {
    throw std::invalid_argument("finetune: " + to_string(mode) +
                                " mode needs at least one new task");
  }
  ParamSet params = trained.deep_copy();
  params.frozen.clear();
  for (TaskId t : new_tasks) {
    add_task_head(params, cfg.net, t,
                  seed ^ static_cast<std::uint64_t>(task_index(t)));
  }

  std::vector<TaskId> objective;
  UpdateScope scope;
  switch (mode) {
    case FinetuneMode::HeadsOnly: {
      objective = new_tasks;
      std::set<TaskId> newset(new_tasks.begin(), new_tasks.end());
      scope = UpdateScope::heads_only(newset, cfg.uncertainty_weighting);
      break;
    }
    case FinetuneMode::TargetOnly:
      objective = new_tasks;
      scope = joint_scope(objective, true, cfg.uncertainty_weighting);
      break;
    case FinetuneMode::AllParams:
      objective = train_tasks;
      objective.insert(objective.end(), new_tasks.begin(), new_tasks.end());
      std::sort(objective.begin(), objective.end());
      scope = joint_scope(objective, true, cfg.uncertainty_weighting);
      break;
  }

  auto out = joint_train_loop(params, objective, scope, splits, cfg);

  RunReport rep;
  rep.paradigm = "finetune";
  rep.trained_tasks = train_tasks;
  rep.finetuned_tasks = new_tasks;
  rep.epochs = std::move(out.log);
  rep.epochs_total = out.epochs;
  rep.failed = out.failed;
  rep.failure = out.failure;
  rep.seed = seed;
  rep.splits_hash = hash_splits(splits);
  if (!rep.failed) {
    std::vector<TaskId> all_tasks = train_tasks;
    all_tasks.insert(all_tasks.end(), new_tasks.begin(), new_tasks.end());
    std::sort(all_tasks.begin(), all_tasks.end());
    rep.test = evaluate(params, splits.test, all_tasks);
  }
  return {std::move(params), std::move(rep)};
}

RunReport merge_finetune(RunReport train_phase, const RunReport& finetune_phase) {
  RunReport merged = std::move(train_phase);
  merged.finetuned_tasks = finetune_phase.finetuned_tasks;
  merged.finetune_epochs = finetune_phase.epochs;
  merged.epochs_finetune = finetune_phase.epochs_total;
  merged.test_pre_finetune = merged.test;
  merged.test = finetune_phase.test;
  merged.failed = merged.failed || finetune_phase.failed;
  if (finetune_phase.failed) merged.failure = finetune_phase.failure;
  return merged;
}

}  // namespace mtml
