#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "mtml/network.hpp"

using namespace mtml;

namespace {

std::vector<TaskId> all4() {
  return {TaskId::T1, TaskId::T2, TaskId::T3, TaskId::T4};
}

}  // namespace

TEST_CASE("init_params: logvars zero, deterministic, fan-in scaled") {
  NetConfig cfg = NetConfig::defaults();
  ParamSet p = init_params(cfg, all4(), 5);
  for (const auto& [t, lv] : p.logvars) CHECK(lv.value() == 0.0);

  ParamSet q = init_params(cfg, all4(), 5);
  CHECK(p.flatten() == q.flatten());
  ParamSet r = init_params(cfg, all4(), 6);
  CHECK(p.flatten() != r.flatten());

  // every weight obeys |w| <= sqrt(1/fan_in); biases are zero
  for (const ParamRef& ref : p.params()) {
    if (ref.kind == ParamKind::TrunkWeight || ref.kind == ParamKind::HeadWeight) {
      double bound = std::sqrt(1.0 / static_cast<double>(ref.tensor.shape()[0]));
      for (double v : ref.tensor.data()) CHECK(std::fabs(v) <= bound);
    }
    if (ref.kind == ParamKind::TrunkBias || ref.kind == ParamKind::HeadBias) {
      for (double v : ref.tensor.data()) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("init_params: a head initialized alone matches the same head in a full set") {
  NetConfig cfg = NetConfig::defaults();
  ParamSet full = init_params(cfg, all4(), 9);
  ParamSet solo = init_params(cfg, {TaskId::T3}, 9);
  const auto& a = full.heads.at(TaskId::T3);
  const auto& b = solo.heads.at(TaskId::T3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::equal(a[i].w.data().begin(), a[i].w.data().end(), b[i].w.data().begin()));
  }
}

TEST_CASE("forward: empty request, shape contract, unknown task") {
  NetConfig cfg = NetConfig::defaults();
  ParamSet p = init_params(cfg, {TaskId::T1, TaskId::T2}, 1);
  Rng rng(2);
  Tensor x = Tensor::uniform({6, 8}, rng, -1.0, 1.0);

  CHECK(forward(p, x, {}).empty());

  auto out = forward(p, x, {TaskId::T2});
  REQUIRE(out.count(TaskId::T2) == 1);
  CHECK(out.at(TaskId::T2).shape() == Shape{6, 1});
  CHECK(out.count(TaskId::T1) == 0);

  CHECK_THROWS_AS(forward(p, x, {TaskId::T4}), std::invalid_argument);
}

TEST_CASE("forward: multi-task pass equals the union of single-task passes") {
  NetConfig cfg = NetConfig::defaults();
  ParamSet p = init_params(cfg, all4(), 3);
  Rng rng(4);
  Tensor x = Tensor::uniform({5, 8}, rng, -1.0, 1.0);

  auto joint = forward(p, x, {TaskId::T1, TaskId::T2});
  auto only1 = forward(p, x, {TaskId::T1});
  auto only2 = forward(p, x, {TaskId::T2});
  CHECK(std::equal(joint.at(TaskId::T1).data().begin(), joint.at(TaskId::T1).data().end(),
                   only1.at(TaskId::T1).data().begin()));
  CHECK(std::equal(joint.at(TaskId::T2).data().begin(), joint.at(TaskId::T2).data().end(),
                   only2.at(TaskId::T2).data().begin()));
}

TEST_CASE("flatten/unflatten: bijection, analytic length, single-entry perturbation") {
  NetConfig cfg = NetConfig::defaults();
  ParamSet p = init_params(cfg, all4(), 7);
  auto flat = p.flatten();

  // Sum over layers of (fan_in + 1) * fan_out plus one logvar per task:
  // trunk 8->32->32->16, heads 16->16->{4,1,3,1}.
  int expect = (8 + 1) * 32 + (32 + 1) * 32 + (32 + 1) * 16;
  for (int out : {4, 1, 3, 1}) expect += (16 + 1) * 16 + (16 + 1) * out;
  expect += 4;
  CHECK(flat.size() == static_cast<std::size_t>(expect));
  CHECK(cfg.param_count(all4()) == expect);

  ParamSet q = init_params(cfg, all4(), 8);
  q.unflatten(flat);
  CHECK(q.flatten() == flat);

  // perturb one coordinate -> exactly one stored entry changes
  std::size_t k = 123;
  auto flat2 = flat;
  flat2[k] += 1.0;
  q.unflatten(flat2);
  auto back = q.flatten();
  int diffs = 0;
  for (std::size_t i = 0; i < back.size(); ++i) {
    if (back[i] != flat[i]) ++diffs;
  }
  CHECK(diffs == 1);

  flat2.pop_back();
  CHECK_THROWS_AS(q.unflatten(flat2), std::invalid_argument);
}

TEST_CASE("deep_copy shares no storage") {
  NetConfig cfg = NetConfig::defaults();
  ParamSet p = init_params(cfg, all4(), 1);
  ParamSet c = p.deep_copy();
  c.trunk[0].w.data_mut()[0] += 42.0;
  CHECK(p.trunk[0].w.at(0) != c.trunk[0].w.at(0));
  CHECK(p.trunk[0].w.node().get() != c.trunk[0].w.node().get());
}

TEST_CASE("gradient isolation: heads outside the forward task set get no grad") {
  NetConfig cfg = NetConfig::defaults();
  ParamSet p = init_params(cfg, all4(), 11);
  Rng rng(12);
  Tensor x = Tensor::uniform({4, 8}, rng, -1.0, 1.0);

  auto out = forward(p, x, {TaskId::T1, TaskId::T3});
  Tensor loss = add(mean(mul(out.at(TaskId::T1), out.at(TaskId::T1))),
                    mean(mul(out.at(TaskId::T3), out.at(TaskId::T3))));
  backward(loss);

  for (const ParamRef& r : p.params()) {
    if (r.task && (*r.task == TaskId::T2 || *r.task == TaskId::T4)) {
      CHECK_FALSE(r.tensor.has_grad());
    }
  }
  CHECK(p.trunk[0].w.has_grad());
  CHECK(p.heads.at(TaskId::T1)[0].w.has_grad());
}

TEST_CASE("trunk sharing: joint trunk grads equal the sum of single-task grads") {
  NetConfig cfg = NetConfig::defaults();
  Rng rng(13);
  Tensor x = Tensor::uniform({4, 8}, rng, -1.0, 1.0);
  auto loss_for = [&](ParamSet& ps, std::vector<TaskId> tasks) {
    auto out = forward(ps, x, tasks);
    Tensor total = Tensor::scalar(0.0);
    for (auto& [t, y] : out) total = add(total, mean(mul(y, y)));
    return total;
  };

  ParamSet joint = init_params(cfg, all4(), 21);
  backward(loss_for(joint, {TaskId::T1, TaskId::T2}));

  ParamSet s1 = init_params(cfg, all4(), 21);
  backward(loss_for(s1, {TaskId::T1}));
  ParamSet s2 = init_params(cfg, all4(), 21);
  backward(loss_for(s2, {TaskId::T2}));

  for (std::size_t layer = 0; layer < joint.trunk.size(); ++layer) {
    auto gj = joint.trunk[layer].w.grad();
    auto g1 = s1.trunk[layer].w.grad();
    auto g2 = s2.trunk[layer].w.grad();
    for (std::size_t i = 0; i < gj.size(); ++i) {
      CHECK(gj[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  NetConfig cfg = NetConfig::defaults();
  ParamSet p = init_params(cfg, all4(), 31);
  // make the values less structured than a fresh init
  for (ParamRef& r : p.params()) {
    for (double& v : r.tensor.data_mut()) v = std::sin(v * 1e3) * 1.7;
  }
  auto dir = std::filesystem::temp_directory_path() / "mtml_ckpt_test";
  std::filesystem::create_directories(dir);
  std::string stem = (dir / "net").string();
  save_checkpoint(p, cfg, 31, stem);
  Checkpoint ck = load_checkpoint(stem);
  CHECK(ck.seed == 31);
  CHECK(ck.tasks == all4());
  CHECK(ck.params.flatten() == p.flatten());
  CHECK(ck.config.param_count(ck.tasks) == cfg.param_count(all4()));
  std::filesystem::remove_all(dir);
}
