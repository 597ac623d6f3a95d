#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mtml/episodes.hpp"
#include "mtml/network.hpp"
#include "mtml/optim.hpp"

namespace mtml {

// What the inner (task-specific) step adapts. TrunkAndHeads is the default:
// one SGD step on the trunk plus the episode's task heads. HeadsOnly is the
// strict reading where the trunk is held fixed during adaptation. Logvars
// never move in the inner step.
enum class InnerScope { TrunkAndHeads, HeadsOnly };

enum class OuterMode { FirstOrder, ExactCheck };

struct MetaConfig {
  double inner_lr = 0.01;
  InnerScope inner_scope = InnerScope::TrunkAndHeads;
  OuterMode outer_mode = OuterMode::FirstOrder;
  double exact_h = 1e-4;      // probe step for the finite-difference oracle
  bool update_logvars = true;  // outer step; false pins uncertainty weights
};

struct EpisodeStats {
  std::string combo;
  double support_loss_before = 0.0;
  double support_loss_after = 0.0;
  double query_loss = 0.0;
};

struct MetaStepReport {
  std::vector<EpisodeStats> episodes;
  double total_query_loss = 0.0;  // summed, matching the outer objective
  double grad_norm = 0.0;
};

// One SGD step on the episode's support loss applied to a deep copy:
// trunk (per inner_scope) and the episode's task heads move, heads of absent
// tasks and all logvars stay untouched. inner_lr = 0 returns a bit-identical
// copy.
ParamSet inner_adapt(const ParamSet& params, const Episode& episode,
                     const MetaConfig& cfg);

// Accumulates d(sum of query losses at adapted params)/d(original params)
// into the grads of `params`, one episode at a time in the given order.
// First-order: the inner step is treated as constant w.r.t. the originals.
MetaStepReport accumulate_meta_grads(ParamSet& params,
                                     const std::vector<Episode>& episodes,
                                     const MetaConfig& cfg);

// Full outer update: meta-gradients (per cfg.outer_mode) followed by one
// AdamW step over trunk, the episodes' heads, and their logvars.
MetaStepReport outer_step(ParamSet& params, AdamW& opt,
                          const std::vector<Episode>& episodes,
                          const MetaConfig& cfg);

// Flattened first-order meta-gradient in canonical parameter order
// (zeros for parameters the episodes never touch). Verification surface.
std::vector<double> first_order_meta_gradient(const ParamSet& params,
                                              const std::vector<Episode>& episodes,
                                              const MetaConfig& cfg);

// Central finite differences of F(v) = query_loss(inner_adapt(unflatten(v)))
// over every flat coordinate: the true meta-gradient including the
// second-order term the first-order mode drops. Small nets only.
std::vector<double> exact_meta_gradient(const ParamSet& params, const Episode& episode,
                                        const MetaConfig& cfg, double h);

// Generic central-difference driver used by the oracle.
std::vector<double> central_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::vector<double> at, double h);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace mtml
