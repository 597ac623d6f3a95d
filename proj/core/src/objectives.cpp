#include "mtml/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace mtml {

TaskMask TaskMask::only(const std::vector<TaskId>& tasks) {
  TaskMask m;
  for (TaskId t : kAllTasks) m.included[t] = false;
  for (TaskId t : tasks) m.included[t] = true;
  return m;
}

bool TaskMask::is_included(TaskId t) const {
  auto it = included.find(t);
  return it != included.end() && it->second;
}

bool TaskMask::any() const {
  for (const auto& [_, on] : included) {
    if (on) return true;
  }
  return false;
}

std::vector<TaskId> TaskMask::included_tasks() const {
  std::vector<TaskId> out;
  for (const auto& [t, on] : included) {
    if (on) out.push_back(t);
  }
  return out;
}

namespace {

void check_pred_shape(const TaskSpec& spec, const Tensor& pred) {
  if (pred.rank() != 2 || pred.shape()[1] != static_cast<std::size_t>(spec.out_dim)) {
    throw std::invalid_argument("task_loss(" + to_string(spec.id) +
                                "): prediction shape " + shape_to_string(pred.shape()) +
                                " does not match out_dim " + std::to_string(spec.out_dim));
  }
}

// Softmax cross-entropy with the rowwise max folded in as a constant shift;
// the shift cancels in the softmax but keeps exp() in range.
Tensor cross_entropy(const Tensor& logits, const Tensor& labels) {
  const std::size_t B = logits.shape()[0], C = logits.shape()[1];
  if (labels.size() != B) {
    throw std::invalid_argument("task_loss(T1): " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(B) + " rows");
  }
  std::vector<double> mx(B);
  std::vector<double> onehot(B * C, 0.0);
  for (std::size_t r = 0; r < B; ++r) {
    double m = logits.at(r, 0);
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, logits.at(r, c));
    mx[r] = m;
    double lv = labels.data()[r];
    auto label = static_cast<long long>(lv);
    if (lv != static_cast<double>(label) || label < 0 ||
        label >= static_cast<long long>(C)) {
      throw std::invalid_argument("task_loss(T1): label " + std::to_string(lv) +
                                  " outside [0, " + std::to_string(C) + ")");
    }
    onehot[r * C + static_cast<std::size_t>(label)] = 1.0;
  }
  Tensor mxcol({B, 1}, mx);
  Tensor shifted = sub(logits, matmul(mxcol, Tensor::full({1, C}, 1.0)));
  Tensor lse = add(log(sum(exp(shifted), 1)), reshape(mxcol, {B}));
  Tensor zy = sum(mul(logits, Tensor({B, C}, std::move(onehot))), 1);
  return mean(sub(lse, zy));
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  Tensor d = sub(pred, target);
  return mean(mul(d, d));
}

// mean(1 - cos(pred / |pred|, target)); targets are unit vectors.
Tensor inverse_cosine(const Tensor& pred, const Tensor& target) {
  const std::size_t B = pred.shape()[0], D = pred.shape()[1];
  Tensor norms = sqrt(sum(mul(pred, pred), 1));                       // [B]
  Tensor inv = reshape(div(Tensor::full({B}, 1.0), norms), {B, 1});   // [B x 1]
  Tensor predn = mul(pred, matmul(inv, Tensor::full({1, D}, 1.0)));
  Tensor dots = sum(mul(predn, target), 1);                           // [B]
  return mean(sub(Tensor::full({B}, 1.0), dots));
}

// Piecewise Huber assembled from a constant 0/1 mask over the residuals;
// the mask is flat on each branch so gradients flow through the right one.
Tensor huber(const Tensor& pred, const Tensor& target, double delta) {
  Tensor r = sub(pred, target);
  const std::size_t n = r.size();
  std::vector<double> quad_mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    quad_mask[i] = std::fabs(r.data()[i]) <= delta ? 1.0 : 0.0;
  }
  Tensor mask(r.shape(), quad_mask);
  Tensor quad = scale(mul(r, r), 0.5);
  Tensor lin = shift(scale(abs(r), delta), -0.5 * delta * delta);
  Tensor elems = add(mul(mask, quad), mul(shift(neg(mask), 1.0), lin));
  return mean(elems);
}

}  // namespace

Tensor task_loss(const TaskSpec& spec, const Tensor& pred, const Tensor& target) {
  check_pred_shape(spec, pred);
  Tensor loss;
  switch (spec.kind) {
    case TaskKind::Classification: loss = cross_entropy(pred, target); break;
    case TaskKind::ScalarRegression: loss = mse(pred, target); break;
    case TaskKind::UnitVecRegression: loss = inverse_cosine(pred, target); break;
    case TaskKind::RobustRegression: loss = huber(pred, target, kHuberDelta); break;
  }
  if (!std::isfinite(loss.value())) {
    throw std::runtime_error("task_loss(" + to_string(spec.id) +
                             "): non-finite loss value");
  }
  return loss;
}

Tensor combined_loss(const std::map<TaskId, Tensor>& losses,
                     const std::map<TaskId, Tensor>& logvars, const TaskMask& mask) {
  if (!mask.any()) throw std::invalid_argument("combined_loss: empty task mask");
  Tensor total;
  for (TaskId t : mask.included_tasks()) {
    auto lit = losses.find(t);
    if (lit == losses.end()) {
      throw std::invalid_argument("combined_loss: no loss for included task " +
                                  to_string(t));
    }
    auto sit = logvars.find(t);
    if (sit == logvars.end()) {
      throw std::invalid_argument("combined_loss: no logvar for included task " +
                                  to_string(t));
    }
    const Tensor& s = sit->second;
    Tensor term = add(mul(exp(neg(s)), lit->second), scale(s, 0.5));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

double MetricReport::at(TaskId t, const std::string& metric) const {
  return values.at(t).at(metric);
}

std::string MetricReport::to_json_string() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [t, metrics] : values) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [name, v] : metrics) m[name] = v;
    j[to_string(t)] = m;
  }
  return j.dump();
}

bool metric_higher_is_better(const std::string& metric) {
  return metric == "accuracy" || metric == "cosine_sim" ||
         metric.rfind("pct_within", 0) == 0;
}

std::string primary_metric(TaskId t) {
  switch (t) {
    case TaskId::T1: return "accuracy";
    case TaskId::T2: return "mae";
    case TaskId::T3: return "angular_mean_deg";
    case TaskId::T4: return "mae";
  }
  return "";
}

namespace {

double mae_of(const Tensor& pred, const Tensor& target) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    acc += std::fabs(pred.data()[i] - target.data()[i]);
  }
  return acc / static_cast<double>(pred.size());
}

}  // namespace

MetricReport compute_metrics(const std::map<TaskId, Tensor>& preds, const Batch& batch,
                             const std::vector<TaskId>& tasks, int num_classes) {
  MetricReport report;
  for (TaskId t : tasks) {
    const Tensor& pred = preds.at(t);
    const Tensor& target = batch.targets.at(t);
    auto& m = report.values[t];
    switch (t) {
      case TaskId::T1: {
        const std::size_t B = pred.shape()[0];
        const auto C = static_cast<std::size_t>(num_classes);
        int correct = 0;
        for (std::size_t r = 0; r < B; ++r) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < C; ++c) {
            if (pred.at(r, c) > pred.at(r, best)) best = c;
          }
          if (best == static_cast<std::size_t>(target.data()[r])) ++correct;
        }
        m["accuracy"] = static_cast<double>(correct) / static_cast<double>(B);
        break;
      }
      case TaskId::T2:
      case TaskId::T4:
        m["mae"] = mae_of(pred, target);
        break;
      case TaskId::T3: {
        const std::size_t B = pred.shape()[0];
        std::vector<double> ang(B);
        double cos_acc = 0.0;
        int w11 = 0, w22 = 0, w30 = 0;
        for (std::size_t r = 0; r < B; ++r) {
          double n2 = 0.0;
          for (std::size_t c = 0; c < 3; ++c) n2 += pred.at(r, c) * pred.at(r, c);
          double norm = std::sqrt(n2);
          double dot = 0.0;
          for (std::size_t c = 0; c < 3; ++c) {
            dot += (pred.at(r, c) / norm) * target.at(r, c);
          }
          dot = std::clamp(dot, -1.0, 1.0);
          cos_acc += dot;
          double deg = std::acos(dot) * 180.0 / 3.14159265358979323846;
          ang[r] = deg;
          if (deg <= 11.25) ++w11;
          if (deg <= 22.5) ++w22;
          if (deg <= 30.0) ++w30;
        }
        double mean_deg = 0.0;
        for (double d : ang) mean_deg += d;
        mean_deg /= static_cast<double>(B);
        std::sort(ang.begin(), ang.end());
        double median = (B % 2 == 1) ? ang[B / 2] : 0.5 * (ang[B / 2 - 1] + ang[B / 2]);
        m["cosine_sim"] = cos_acc / static_cast<double>(B);
        m["angular_mean_deg"] = mean_deg;
        m["angular_median_deg"] = median;
        m["pct_within_11_25"] = 100.0 * w11 / static_cast<double>(B);
        m["pct_within_22_5"] = 100.0 * w22 / static_cast<double>(B);
        m["pct_within_30"] = 100.0 * w30 / static_cast<double>(B);
        break;
      }
    }
  }
  return report;
}

MetricReport evaluate(const ParamSet& params, const Batch& batch,
                      const std::vector<TaskId>& tasks, int num_classes) {
  autograd::NoGradGuard ng;
  return compute_metrics(forward(params, batch.x, tasks), batch, tasks, num_classes);
}

std::map<TaskId, double> task_loss_values(const ParamSet& params, const Batch& batch,
                                          const std::vector<TaskId>& tasks,
                                          int num_classes) {
  autograd::NoGradGuard ng;
  std::map<TaskId, double> out;
  auto preds = forward(params, batch.x, tasks);
  for (TaskId t : tasks) {
    out[t] = task_loss(TaskSpec::standard(t, num_classes), preds.at(t),
                       batch.targets.at(t)).value();
  }
  return out;
}

Tensor training_loss(const ParamSet& params, const Batch& batch,
                     const std::vector<TaskId>& tasks) {
  auto preds = forward(params, batch.x, tasks);
  std::map<TaskId, Tensor> losses;
  for (TaskId t : tasks) {
    // T1's class count is whatever the head emits
    int out_dim = static_cast<int>(preds.at(t).cols());
    auto it = batch.targets.find(t);
    if (it == batch.targets.end()) {
      throw std::invalid_argument("training_loss: batch has no targets for " +
                                  to_string(t));
    }
    losses.emplace(t, task_loss(TaskSpec::standard(t, out_dim), preds.at(t), it->second));
  }
  return combined_loss(losses, params.logvars, TaskMask::only(tasks));
}

double training_loss_value(const ParamSet& params, const Batch& batch,
                           const std::vector<TaskId>& tasks) {
  autograd::NoGradGuard ng;
  return training_loss(params, batch, tasks).value();
}

}  // namespace mtml
