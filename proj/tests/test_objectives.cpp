#include <cmath>

#include "doctest.h"
#include "mtml/objectives.hpp"

using namespace mtml;

namespace {

Batch batch_with(TaskId t, Tensor target, std::size_t rows, std::size_t d_in = 8) {
  Batch b;
  b.x = Tensor::zeros({rows, d_in});
  b.targets.emplace(t, std::move(target));
  return b;
}

}  // namespace

TEST_CASE("task_loss T3: identical unit vectors give zero loss") {
  Tensor t = Tensor::matrix({{1, 0, 0}, {0, 0.6, 0.8}});
  Tensor loss = task_loss(TaskSpec::standard(TaskId::T3), t.clone(), t);
  CHECK(std::fabs(loss.value()) < 1e-12);
}

TEST_CASE("task_loss T1: uniform logits over 4 classes give ln 4") {
  Tensor logits = Tensor::zeros({3, 4});
  Tensor labels = Tensor::row({0, 1, 3});
  Tensor loss = task_loss(TaskSpec::standard(TaskId::T1), logits, labels);
  CHECK(std::fabs(loss.value() - std::log(4.0)) < 1e-12);
}

TEST_CASE("task_loss T1: label domain errors") {
  Tensor logits = Tensor::zeros({2, 4});
  CHECK_THROWS_AS(task_loss(TaskSpec::standard(TaskId::T1), logits, Tensor::row({0, 4})),
                  std::invalid_argument);
  CHECK_THROWS_AS(task_loss(TaskSpec::standard(TaskId::T1), logits, Tensor::row({0, -1})),
                  std::invalid_argument);
}

TEST_CASE("task_loss T4: Huber closed form at |r| in {0.5, 1, 3}") {
  auto huber_at = [](double r) {
    Tensor pred({1, 1}, {r});
    Tensor target = Tensor::zeros({1, 1});
    return task_loss(TaskSpec::standard(TaskId::T4), pred, target).value();
  };
  CHECK(huber_at(0.5) == doctest::Approx(0.125).epsilon(1e-15));   // r^2/2
  CHECK(huber_at(1.0) == doctest::Approx(0.5).epsilon(1e-15));     // boundary
  CHECK(huber_at(3.0) == doctest::Approx(2.5).epsilon(1e-15));     // |r| - 1/2
  CHECK(huber_at(-3.0) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("task_loss T4: quadratic branch equals r^2/2 exactly for |r| <= delta") {
  for (double r : {0.0, 0.1, -0.37, 0.99, 1.0, -1.0}) {
    Tensor pred({1, 1}, {r});
    double got = task_loss(TaskSpec::standard(TaskId::T4), pred, Tensor::zeros({1, 1})).value();
    CHECK(got == 0.5 * r * r);
  }
}

TEST_CASE("task_loss: shape and finiteness errors name the task") {
  Tensor bad = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(task_loss(TaskSpec::standard(TaskId::T2), bad, Tensor::zeros({2, 1})),
                  std::invalid_argument);
  Tensor inf_pred({1, 1}, {std::numeric_limits<double>::infinity()});
  try {
    task_loss(TaskSpec::standard(TaskId::T2), inf_pred, Tensor::zeros({1, 1}));
    FAIL("expected exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("T2") != std::string::npos);
  }
}

TEST_CASE("combined_loss: s=0 recovers the plain sum") {
  std::map<TaskId, Tensor> losses, logvars;
  double expect = 0.0;
  double raw[] = {0.7, 1.3, 0.05, 2.4};
  for (TaskId t : kAllTasks) {
    losses.emplace(t, Tensor::scalar(raw[task_index(t)], true));
    logvars.emplace(t, Tensor::zeros({1}, true));
    expect += raw[task_index(t)];
  }
  Tensor L = combined_loss(losses, logvars,
                           TaskMask::only({kAllTasks.begin(), kAllTasks.end()}));
  CHECK(std::fabs(L.value() - expect) < 1e-12);
}

TEST_CASE("combined_loss: worked example s = ln 2, single task, L = 1") {
  std::map<TaskId, Tensor> losses, logvars;
  losses.emplace(TaskId::T2, Tensor::scalar(1.0));
  logvars.emplace(TaskId::T2, Tensor::scalar(std::log(2.0)));
  Tensor L = combined_loss(losses, logvars, TaskMask::only({TaskId::T2}));
  // exp(-ln 2) * 1 + (ln 2)/2 = 0.5 + 0.34657...
  CHECK(std::fabs(L.value() - 0.8466) < 1e-4);
}

TEST_CASE("combined_loss: excluded tasks are absent from value and graph") {
  std::map<TaskId, Tensor> logvars;
  for (TaskId t : kAllTasks) logvars.emplace(t, Tensor::zeros({1}, true));

  std::map<TaskId, Tensor> a, b;
  a.emplace(TaskId::T2, Tensor::scalar(0.9, true));
  a.emplace(TaskId::T1, Tensor::scalar(100.0, true));
  b.emplace(TaskId::T2, Tensor::scalar(0.9, true));
  b.emplace(TaskId::T1, Tensor::scalar(-55.0, true));
  TaskMask only2 = TaskMask::only({TaskId::T2});
  CHECK(combined_loss(a, logvars, only2).value() ==
        combined_loss(b, logvars, only2).value());

  Tensor L = combined_loss(a, logvars, only2);
  backward(L);
  CHECK_FALSE(a.at(TaskId::T1).has_grad());
  CHECK(a.at(TaskId::T2).has_grad());
  CHECK_FALSE(logvars.at(TaskId::T1).has_grad());

  CHECK_THROWS_AS(combined_loss(a, logvars, TaskMask::only({})), std::invalid_argument);
}

TEST_CASE("masked-gradient invariant: excluded heads stay grad-free end to end") {
  NetConfig cfg = NetConfig::defaults();
  std::vector<TaskId> all(kAllTasks.begin(), kAllTasks.end());
  ParamSet p = init_params(cfg, all, 17);
  WorldFn w = make_world(17, 8, 16);
  Batch batch = sample_batch(w, all_task_specs(), 8, 2);

  auto preds = forward(p, batch.x, {TaskId::T2, TaskId::T3});
  std::map<TaskId, Tensor> losses;
  for (TaskId t : {TaskId::T2, TaskId::T3}) {
    losses.emplace(t, task_loss(TaskSpec::standard(t), preds.at(t), batch.targets.at(t)));
  }
  Tensor L = combined_loss(losses, p.logvars, TaskMask::only({TaskId::T2, TaskId::T3}));
  backward(L);
  for (const ParamRef& r : p.params()) {
    bool excluded = r.task && (*r.task == TaskId::T1 || *r.task == TaskId::T4);
    if (excluded) {
      CHECK_FALSE(r.tensor.has_grad());
    }
  }
  CHECK(p.logvars.at(TaskId::T2).has_grad());
  CHECK(p.trunk[0].w.has_grad());
}

TEST_CASE("compute_metrics T3: perfect, orthogonal, and clamped predictions") {
  Tensor target = Tensor::matrix({{1, 0, 0}, {0, 1, 0}});
  Batch b = batch_with(TaskId::T3, target, 2);

  std::map<TaskId, Tensor> perfect;
  perfect.emplace(TaskId::T3, scale(target, 2.5));  // direction is what counts
  MetricReport r1 = compute_metrics(perfect, b, {TaskId::T3});
  CHECK(r1.at(TaskId::T3, "angular_mean_deg") == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(r1.at(TaskId::T3, "pct_within_11_25") == 100.0);
  CHECK(r1.at(TaskId::T3, "cosine_sim") == doctest::Approx(1.0));

  std::map<TaskId, Tensor> ortho;
  ortho.emplace(TaskId::T3, Tensor::matrix({{0, 0, 1}, {0, 0, -1}}));
  MetricReport r2 = compute_metrics(ortho, b, {TaskId::T3});
  CHECK(r2.at(TaskId::T3, "angular_mean_deg") == doctest::Approx(90.0));
  CHECK(r2.at(TaskId::T3, "cosine_sim") == doctest::Approx(0.0));
  CHECK(r2.at(TaskId::T3, "pct_within_30") == 0.0);

  // near-parallel with huge magnitudes: clamp keeps acos in domain
  std::map<TaskId, Tensor> big;
  big.emplace(TaskId::T3, Tensor::matrix({{1e200, 0, 0}, {0, 1e200, 0}}));
  MetricReport r3 = compute_metrics(big, b, {TaskId::T3});
  CHECK(std::isfinite(r3.at(TaskId::T3, "angular_mean_deg")));
  // monotone thresholds
  CHECK(r3.at(TaskId::T3, "pct_within_11_25") <= r3.at(TaskId::T3, "pct_within_22_5"));
  CHECK(r3.at(TaskId::T3, "pct_within_22_5") <= r3.at(TaskId::T3, "pct_within_30"));
}

TEST_CASE("compute_metrics T1: random predictions score about 1/C") {
  const std::size_t B = 1000;
  Rng rng(33);
  std::vector<double> labels(B);
  for (double& v : labels) v = rng.below(4);
  Batch b = batch_with(TaskId::T1, Tensor({B}, labels), B);
  std::map<TaskId, Tensor> preds;
  preds.emplace(TaskId::T1, Tensor::uniform({B, 4}, rng, -1.0, 1.0));
  MetricReport r = compute_metrics(preds, b, {TaskId::T1});
  // 3 sigma binomial bound around 0.25 at n = 1000
  double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(B));
  CHECK(std::fabs(r.at(TaskId::T1, "accuracy") - 0.25) < 3.0 * sigma);
}

TEST_CASE("evaluate: end-to-end on a fresh network produces sane fields") {
  NetConfig cfg = NetConfig::defaults();
  std::vector<TaskId> all(kAllTasks.begin(), kAllTasks.end());
  ParamSet p = init_params(cfg, all, 3);
  WorldFn w = make_world(3, 8, 16);
  Batch batch = sample_batch(w, all_task_specs(), 64, 9);
  MetricReport r = evaluate(p, batch, all);
  CHECK(r.at(TaskId::T1, "accuracy") >= 0.0);
  CHECK(r.at(TaskId::T1, "accuracy") <= 1.0);
  CHECK(r.at(TaskId::T3, "pct_within_11_25") <= r.at(TaskId::T3, "pct_within_22_5"));
  CHECK(r.at(TaskId::T3, "pct_within_22_5") <= r.at(TaskId::T3, "pct_within_30"));
  CHECK(r.at(TaskId::T2, "mae") >= 0.0);
  CHECK(r.to_json_string().find("angular_mean_deg") != std::string::npos);

  auto lv = task_loss_values(p, batch, all);
  for (const auto& [t, v] : lv) CHECK(std::isfinite(v));
}
