#include "mtml/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mtml {

UpdateScope UpdateScope::full(const ParamSet& p) {
  UpdateScope s;
  for (TaskId t : p.task_ids()) {
    s.heads.insert(t);
    s.logvars.insert(t);
  }
  return s;
}

UpdateScope UpdateScope::heads_only(const std::set<TaskId>& tasks, bool with_logvars) {
  UpdateScope s;
  s.trunk = false;
  s.heads = tasks;
  if (with_logvars) s.logvars = tasks;
  return s;
}

bool UpdateScope::covers(const ParamRef& ref) const {
  switch (ref.kind) {
    case ParamKind::TrunkWeight:
    case ParamKind::TrunkBias:
      return trunk;
    case ParamKind::HeadWeight:
    case ParamKind::HeadBias:
      return heads.count(*ref.task) != 0;
    case ParamKind::LogVar:
      return logvars.count(*ref.task) != 0;
  }
  return false;
}

namespace {

bool is_frozen(const ParamSet& p, const ParamRef& ref) {
  return ref.task && ref.kind != ParamKind::LogVar && p.frozen.count(*ref.task) != 0;
}

[[noreturn]] void missing_grad(const char* who, const ParamRef& ref) {
  throw std::runtime_error(std::string(who) + ": no gradient on in-scope parameter " +
                           ref.name);
}

}  // namespace

void sgd_step(ParamSet& params, const UpdateScope& scope, double lr) {
  for (ParamRef& ref : params.params()) {
    if (!scope.covers(ref) || is_frozen(params, ref)) continue;
    if (!ref.tensor.has_grad()) missing_grad("sgd_step", ref);
    if (lr == 0.0) continue;  // exact no-op
    auto p = ref.tensor.data_mut();
    auto g = ref.tensor.grad();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  }
}

void AdamW::step(ParamSet& params, const UpdateScope& scope) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (ParamRef& ref : params.params()) {
    if (!scope.covers(ref) || is_frozen(params, ref)) continue;
    if (!ref.tensor.has_grad()) missing_grad("adamw_step", ref);
    auto p = ref.tensor.data_mut();
    auto g = ref.tensor.grad();
    Moments& mom = moments_[ref.name];
    if (mom.m.empty()) {
      mom.m.assign(p.size(), 0.0);
      mom.v.assign(p.size(), 0.0);
    }
    const bool decay = cfg_.weight_decay != 0.0 && ref.kind != ParamKind::TrunkBias &&
                       ref.kind != ParamKind::HeadBias && ref.kind != ParamKind::LogVar;
    for (std::size_t i = 0; i < p.size(); ++i) {
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = mom.m[i] / bc1;
      double vhat = mom.v[i] / bc2;
      double update = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (decay) update += cfg_.lr * cfg_.weight_decay * p[i];
      p[i] -= update;
    }
  }
}

}  // namespace mtml
