#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mtml/tensor.hpp"

namespace mtml {

enum class TaskId { T1, T2, T3, T4 };

constexpr std::array<TaskId, 4> kAllTasks = {TaskId::T1, TaskId::T2, TaskId::T3,
                                             TaskId::T4};

std::string to_string(TaskId id);
TaskId task_from_string(const std::string& name);
inline int task_index(TaskId id) { return static_cast<int>(id); }

enum class TaskKind {
  Classification,
  ScalarRegression,
  UnitVecRegression,
  RobustRegression,
};

// Declarative description of one task; the kind <-> loss pairing is fixed.
struct TaskSpec {
  TaskId id;
  TaskKind kind;
  int out_dim;
  std::string loss_id;
  std::vector<std::string> metric_ids;

  static TaskSpec standard(TaskId id, int num_classes = 4);
};

std::vector<TaskSpec> all_task_specs(int num_classes = 4);

// Shared-input batch: every task's target refers to the same rows of x.
// T1 targets are integer class labels stored as doubles, shape [B];
// T2/T4 are [B x 1]; T3 is [B x 3] with unit-norm rows.
struct Batch {
  Tensor x;
  std::map<TaskId, Tensor> targets;

  std::size_t rows() const { return x.defined() ? x.shape()[0] : 0; }
  Batch gather_rows(const std::vector<std::size_t>& idx,
                    const std::vector<TaskId>& keep_tasks) const;
  Batch slice_rows(std::size_t begin, std::size_t end) const;
};

struct WorldConfig {
  std::uint64_t seed = 1;
  int d_in = 8;
  int d_z = 16;
  int num_classes = 4;
  double noise_std = 0.0;  // gaussian target noise on the regression tasks
};

// Fixed random two-layer tanh map g: R^d_in -> R^d_z plus per-task seeded
// projections of the shared latent. Everything is a pure function of
// (seed, d_in, d_z), so two worlds with the same config are identical.
class WorldFn {
 public:
  explicit WorldFn(const WorldConfig& cfg);

  const WorldConfig& config() const { return cfg_; }

  // z = g(x) for one input row.
  std::vector<double> latent(std::span<const double> x) const;

  // Raw generator internals, exposed for white-box relatedness checks.
  std::span<const double> class_proj() const { return class_proj_; }
  std::span<const double> class_offset() const { return class_offset_; }
  std::span<const double> depth_proj() const { return depth_proj_; }
  double depth_bias() const { return depth_bias_; }
  std::span<const double> normal_proj() const { return normal_proj_; }
  std::span<const double> edge_proj() const { return edge_proj_; }
  double edge_clip() const { return edge_clip_; }
  std::span<const double> g_w1() const { return w1_; }
  std::span<const double> g_b1() const { return b1_; }
  std::span<const double> g_w2() const { return w2_; }
  std::span<const double> g_b2() const { return b2_; }

  friend Batch sample_batch(const WorldFn& world, const std::vector<TaskSpec>& tasks,
                            int batch_size, std::uint64_t seed);

 private:
  WorldConfig cfg_;
  std::vector<double> w1_, b1_, w2_, b2_;     // g
  std::vector<double> class_proj_;            // C x d_z, rows standardized
  std::vector<double> class_offset_;          // C
  std::vector<double> depth_proj_;            // d_z
  double depth_bias_ = 0.0;
  std::vector<double> normal_proj_;           // 3 x d_z
  std::vector<double> edge_proj_;             // d_z
  double edge_clip_ = 0.0;                    // 90th percentile of |edge_proj . z|
};

inline WorldFn make_world(std::uint64_t seed, int d_in, int d_z) {
  WorldConfig cfg;
  cfg.seed = seed;
  cfg.d_in = d_in;
  cfg.d_z = d_z;
  return WorldFn(cfg);
}

Batch sample_batch(const WorldFn& world, const std::vector<TaskSpec>& tasks,
                   int batch_size, std::uint64_t seed);

struct Splits {
  Batch train;
  Batch val;
  Batch test;
};

// Three disjoint seeded batches drawn from one stream. For a given
// (world, sizes, seed) every caller gets bit-identical splits, so all
// learning paradigms share the same test set.
Splits make_splits(const WorldFn& world, const std::vector<TaskSpec>& tasks,
                   int n_train, int n_val, int n_test, std::uint64_t seed);

// Columnar text export: header row of field names, one sample per line.
void write_batch_columnar(const Batch& batch, std::ostream& os);

std::uint64_t hash_batch(const Batch& batch);
std::uint64_t hash_splits(const Splits& splits);

}  // namespace mtml
