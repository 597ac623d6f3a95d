#include "mtml/meta.hpp"

#include <cmath>
#include <stdexcept>

#include "mtml/objectives.hpp"

namespace mtml {

namespace {

UpdateScope inner_scope_for(const Episode& ep, const MetaConfig& cfg) {
  UpdateScope scope;
  scope.trunk = cfg.inner_scope == InnerScope::TrunkAndHeads;
  scope.heads.insert(ep.combo.tasks.begin(), ep.combo.tasks.end());
  // logvars stay empty: loss re-weighting is an outer concern
  return scope;
}

UpdateScope outer_scope_for(const std::vector<Episode>& episodes, bool with_logvars) {
  UpdateScope scope;
  scope.trunk = true;
  for (const Episode& ep : episodes) {
    scope.heads.insert(ep.combo.tasks.begin(), ep.combo.tasks.end());
    if (with_logvars) {
      scope.logvars.insert(ep.combo.tasks.begin(), ep.combo.tasks.end());
    }
  }
  return scope;
}

}  // namespace

ParamSet inner_adapt(const ParamSet& params, const Episode& episode,
                     const MetaConfig& cfg) {
  for (TaskId t : episode.combo.tasks) {
    if (!params.has_task(t)) {
      throw std::invalid_argument("inner_adapt: episode task " + to_string(t) +
                                  " not in the parameter set");
    }
  }
  ParamSet adapted = params.deep_copy();
  Tensor loss = training_loss(adapted, episode.support, episode.combo.tasks);
  if (!std::isfinite(loss.value())) {
    throw std::runtime_error("inner_adapt: non-finite support loss on episode " +
                             episode.combo.label());
  }
  backward(loss);
  adapted.clear_frozen_grads();
  sgd_step(adapted, inner_scope_for(episode, cfg), cfg.inner_lr);
  adapted.zero_grad();
  return adapted;
}

MetaStepReport accumulate_meta_grads(ParamSet& params,
                                     const std::vector<Episode>& episodes,
                                     const MetaConfig& cfg) {
  MetaStepReport report;
  for (const Episode& ep : episodes) {
    EpisodeStats stats;
    stats.combo = ep.combo.label();
    stats.support_loss_before =
        training_loss_value(params, ep.support, ep.combo.tasks);

    if (cfg.outer_mode == OuterMode::ExactCheck) {
      auto g = exact_meta_gradient(params, ep, cfg, cfg.exact_h);
      std::size_t off = 0;
      for (ParamRef& ref : params.params()) {
        ref.tensor.accumulate_grad(std::span<const double>(&g[off], ref.tensor.size()));
        off += ref.tensor.size();
      }
      ParamSet adapted = inner_adapt(params, ep, cfg);
      stats.support_loss_after =
          training_loss_value(adapted, ep.support, ep.combo.tasks);
      stats.query_loss = training_loss_value(adapted, ep.query, ep.combo.tasks);
    } else {
      ParamSet adapted = inner_adapt(params, ep, cfg);
      stats.support_loss_after =
          training_loss_value(adapted, ep.support, ep.combo.tasks);
      Tensor qloss = training_loss(adapted, ep.query, ep.combo.tasks);
      stats.query_loss = qloss.value();
      if (!std::isfinite(stats.query_loss)) {
        throw std::runtime_error("outer step aborted: non-finite query loss on episode " +
                                 ep.combo.label());
      }
      backward(qloss);
      adapted.clear_frozen_grads();
      // first-order transport: gradients taken at the adapted parameters are
      // applied to the originals
      auto src = adapted.params();
      auto dst = params.params();
      for (std::size_t i = 0; i < src.size(); ++i) {
        if (src[i].tensor.has_grad()) {
          dst[i].tensor.accumulate_grad(src[i].tensor.grad());
        }
      }
    }
    report.total_query_loss += stats.query_loss;
    report.episodes.push_back(std::move(stats));
  }
  double norm2 = 0.0;
  for (const ParamRef& ref : params.params()) {
    for (double g : ref.tensor.grad()) norm2 += g * g;
  }
  report.grad_norm = std::sqrt(norm2);
  return report;
}

MetaStepReport outer_step(ParamSet& params, AdamW& opt,
                          const std::vector<Episode>& episodes,
                          const MetaConfig& cfg) {
  if (episodes.empty()) throw std::invalid_argument("outer_step: empty meta batch");
  params.zero_grad();
  MetaStepReport report = accumulate_meta_grads(params, episodes, cfg);
  params.clear_frozen_grads();
  opt.step(params, outer_scope_for(episodes, cfg.update_logvars));
  params.zero_grad();
  return report;
}

std::vector<double> first_order_meta_gradient(const ParamSet& params,
                                              const std::vector<Episode>& episodes,
                                              const MetaConfig& cfg) {
  ParamSet scratch = params.deep_copy();
  scratch.zero_grad();
  MetaConfig fo = cfg;
  fo.outer_mode = OuterMode::FirstOrder;
  accumulate_meta_grads(scratch, episodes, fo);
  std::vector<double> flat;
  flat.reserve(scratch.param_count());
  for (const ParamRef& ref : scratch.params()) {
    if (ref.tensor.has_grad()) {
      flat.insert(flat.end(), ref.tensor.grad().begin(), ref.tensor.grad().end());
    } else {
      flat.insert(flat.end(), ref.tensor.size(), 0.0);
    }
  }
  return flat;
}

std::vector<double> central_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::vector<double> at, double h) {
  std::vector<double> g(at.size());
  for (std::size_t k = 0; k < at.size(); ++k) {
    const double saved = at[k];
    at[k] = saved + h;
    const double fp = f(at);
    at[k] = saved - h;
    const double fm = f(at);
    at[k] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw std::runtime_error("central_difference_gradient: non-finite value at probe " +
                               std::to_string(k));
    }
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

std::vector<double> exact_meta_gradient(const ParamSet& params, const Episode& episode,
                                        const MetaConfig& cfg, double h) {
  if (params.param_count() > 3000) {
    throw std::invalid_argument(
        "exact_meta_gradient: finite differencing " +
        std::to_string(params.param_count()) + " parameters is off the table");
  }
  if (h < 1e-5 || h > 1e-3) {
    throw std::invalid_argument("exact_meta_gradient: h must lie in [1e-5, 1e-3]");
  }
  ParamSet probe = params.deep_copy();
  auto objective = [&](std::span<const double> v) {
    probe.unflatten(v);
    ParamSet adapted = inner_adapt(probe, episode, cfg);
    return training_loss_value(adapted, episode.query, episode.combo.tasks);
  };
  return central_difference_gradient(objective, params.flatten(), h);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace mtml
