#pragma once

#include <map>
#include <string>
#include <vector>

#include "mtml/network.hpp"
#include "mtml/tasks.hpp"
#include "mtml/tensor.hpp"

namespace mtml {

struct TaskMask {
  std::map<TaskId, bool> included;

  static TaskMask only(const std::vector<TaskId>& tasks);
  bool is_included(TaskId t) const;
  bool any() const;
  std::vector<TaskId> included_tasks() const;
};

// Per-task training losses:
//   T1 softmax cross-entropy (mean over batch), T2 mean squared error,
//   T3 mean(1 - cos(normalized prediction, target)), T4 Huber delta=1.
Tensor task_loss(const TaskSpec& spec, const Tensor& pred, const Tensor& target);

inline constexpr double kHuberDelta = 1.0;

// L = sum over included tasks of exp(-s_i) * L_i + s_i / 2, with s_i the
// learned log-variance. Excluded tasks contribute exactly zero and are absent
// from the graph; at s = 0 this reduces to the plain sum.
Tensor combined_loss(const std::map<TaskId, Tensor>& losses,
                     const std::map<TaskId, Tensor>& logvars, const TaskMask& mask);

struct MetricReport {
  // task -> metric name -> value. Angular percentages are in [0, 100].
  std::map<TaskId, std::map<std::string, double>> values;

  double at(TaskId t, const std::string& metric) const;
  std::string to_json_string() const;
};

// True when larger values of the metric are better.
bool metric_higher_is_better(const std::string& metric);
// The headline metric used for cross-paradigm comparisons.
std::string primary_metric(TaskId t);

// Metric math on given predictions. T3 predictions are normalized and dot
// products clamped to [-1, 1] before arccos, so no finite input can NaN.
MetricReport compute_metrics(const std::map<TaskId, Tensor>& preds, const Batch& batch,
                             const std::vector<TaskId>& tasks, int num_classes = 4);

// Runs forward() without recording a graph and computes the per-task metrics
// on the batch.
MetricReport evaluate(const ParamSet& params, const Batch& batch,
                      const std::vector<TaskId>& tasks, int num_classes = 4);

// Per-task raw loss values on a batch, computed without recording a graph.
std::map<TaskId, double> task_loss_values(const ParamSet& params, const Batch& batch,
                                          const std::vector<TaskId>& tasks,
                                          int num_classes = 4);

// Full training objective on a batch: forward over exactly `tasks`, per-task
// losses, uncertainty-weighted masked combination. Both the joint trainer
// step and the meta outer step go through here, which is what makes the
// inner_lr = 0 collapse bit-exact.
Tensor training_loss(const ParamSet& params, const Batch& batch,
                     const std::vector<TaskId>& tasks);
double training_loss_value(const ParamSet& params, const Batch& batch,
                           const std::vector<TaskId>& tasks);

}  // namespace mtml
