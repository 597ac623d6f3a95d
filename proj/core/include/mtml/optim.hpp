#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mtml/network.hpp"

namespace mtml {

// Which parameter groups an optimizer step may touch. Frozen heads are
// always skipped regardless of the scope.
struct UpdateScope {
  bool trunk = true;
  std::set<TaskId> heads;
  std::set<TaskId> logvars;

  static UpdateScope full(const ParamSet& p);        // trunk + all heads + logvars
  static UpdateScope heads_only(const std::set<TaskId>& tasks, bool with_logvars);
  bool covers(const ParamRef& ref) const;
};

// p' = p - lr * g for every in-scope, unfrozen parameter. lr == 0 leaves the
// stored values untouched bit-for-bit. Missing grads on in-scope parameters
// are an error.
void sgd_step(ParamSet& params, const UpdateScope& scope, double lr);

struct AdamWConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled; never applied to biases or logvars
};

// Decoupled-weight-decay Adam. Moment buffers are keyed by parameter name;
// bias correction uses the true global step count.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  void step(ParamSet& params, const UpdateScope& scope);

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, Moments> moments_;
  std::int64_t t_ = 0;
};

}  // namespace mtml
