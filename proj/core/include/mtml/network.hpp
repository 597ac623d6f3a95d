#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtml/tasks.hpp"
#include "mtml/tensor.hpp"

namespace mtml {

struct HeadConfig {
  std::vector<int> hidden = {16};
  int out_dim = 1;
};

struct NetConfig {
  int d_in = 8;
  std::vector<int> trunk_widths = {32, 32};
  int d_repr = 16;
  std::map<TaskId, HeadConfig> heads;

  static NetConfig defaults(int num_classes = 4);
  // Sum over layers of (fan_in + 1) * fan_out, plus one logvar per task.
  int param_count(const std::vector<TaskId>& tasks) const;
};

struct Layer {
  Tensor w;  // [fan_in x fan_out]
  Tensor b;  // [fan_out]
};

enum class ParamKind { TrunkWeight, TrunkBias, HeadWeight, HeadBias, LogVar };

struct ParamRef {
  std::string name;  // canonical, e.g. "trunk.0.w", "head.T2.1.b", "logvar.T3"
  ParamKind kind;
  std::optional<TaskId> task;
  Tensor tensor;  // shared handle into the ParamSet
};

// Named parameter store partitioned into the shared trunk (meta parameters),
// per-task heads, and per-task uncertainty log-variances. Canonical parameter
// order: trunk layers in order (w then b), then heads in task-id order, then
// logvars in task-id order.
struct ParamSet {
  std::vector<Layer> trunk;
  std::map<TaskId, std::vector<Layer>> heads;
  std::map<TaskId, Tensor> logvars;
  std::set<TaskId> frozen;  // heads that optimizers must never touch

  std::vector<TaskId> task_ids() const;
  bool has_task(TaskId t) const { return heads.count(t) != 0; }

  ParamSet deep_copy() const;
  void zero_grad();
  // Zeroes accumulated grads on frozen heads (second line of defense;
  // optimizers also skip them).
  void clear_frozen_grads();

  std::vector<ParamRef> params();              // canonical order
  std::vector<ParamRef> params() const;
  std::size_t param_count() const;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
};

// Weights ~ uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)), biases 0, logvars 0.
// Each component (trunk, every head) draws from its own derived stream, so a
// head initialized alone is bit-identical to the same head initialized as
// part of a larger task set.
ParamSet init_params(const NetConfig& cfg, const std::vector<TaskId>& tasks,
                     std::uint64_t seed);

// Initializes one extra head (and its logvar) into an existing ParamSet.
void add_task_head(ParamSet& params, const NetConfig& cfg, TaskId task,
                   std::uint64_t seed);

// One trunk pass, then one head pass per requested task; tasks not requested
// produce no output and no graph nodes.
std::map<TaskId, Tensor> forward(const ParamSet& params, const Tensor& x,
                                 const std::vector<TaskId>& tasks);

// Checkpoint: <stem>.json manifest (config, task list, ordering, seed) plus
// <stem>.bin flat little-endian 64-bit parameter vector. Round-trip is
// bit-exact.
struct Checkpoint {
  NetConfig config;
  std::vector<TaskId> tasks;
  std::uint64_t seed = 0;
  ParamSet params;
};

void save_checkpoint(const ParamSet& params, const NetConfig& cfg, std::uint64_t seed,
                     const std::string& path_stem);
Checkpoint load_checkpoint(const std::string& path_stem);

}  // namespace mtml
