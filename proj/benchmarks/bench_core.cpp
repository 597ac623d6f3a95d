#include <benchmark/benchmark.h>

#include "mtml/meta.hpp"
#include "mtml/objectives.hpp"

namespace {

using namespace mtml;

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  Tensor a = Tensor::uniform({n, n}, rng, -1.0, 1.0, true);
  Tensor b = Tensor::uniform({n, n}, rng, -1.0, 1.0, true);
  for (auto _ : state) {
    Tensor loss = sum(matmul(a, b));
    backward(loss);
    a.zero_grad();
    b.zero_grad();
    benchmark::DoNotOptimize(loss.value());
  }
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(16)->Arg(32)->Arg(64);

struct MetaFixture {
  WorldFn world;
  Splits splits;
  ParamSet params;
  ComboFamily family;

  MetaFixture()
      : world((WorldConfig())),
        splits(make_splits(world, all_task_specs(), 256, 64, 64, 1)),
        params(init_params(NetConfig::defaults(),
                           {TaskId::T1, TaskId::T2, TaskId::T3}, 1)),
        family(generate_combos({TaskId::T1, TaskId::T2, TaskId::T3})) {}
};

void BM_TrainingLossBackward(benchmark::State& state) {
  MetaFixture f;
  std::vector<TaskId> tasks = {TaskId::T1, TaskId::T2, TaskId::T3};
  for (auto _ : state) {
    f.params.zero_grad();
    Tensor loss = training_loss(f.params, f.splits.train, tasks);
    backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
}
BENCHMARK(BM_TrainingLossBackward);

void BM_InnerAdapt(benchmark::State& state) {
  MetaFixture f;
  Episode ep = sample_episode(f.family.combos[0], f.splits.train, 16, 16, 7);
  MetaConfig cfg;
  for (auto _ : state) {
    ParamSet adapted = inner_adapt(f.params, ep, cfg);
    benchmark::DoNotOptimize(adapted.trunk[0].w.at(0));
  }
}
BENCHMARK(BM_InnerAdapt);

void BM_OuterStep(benchmark::State& state) {
  MetaFixture f;
  AdamW opt({});
  MetaConfig cfg;
  std::uint64_t epoch = 0;
  for (auto _ : state) {
    auto eps = meta_batch(f.family, 1, f.splits.train, 16, 16, mix_seed(1, ++epoch));
    auto rep = outer_step(f.params, opt, eps, cfg);
    benchmark::DoNotOptimize(rep.total_query_loss);
  }
}
BENCHMARK(BM_OuterStep);

void BM_ExactMetaGradient(benchmark::State& state) {
  NetConfig tiny;
  tiny.d_in = 3;
  tiny.trunk_widths = {4};
  tiny.d_repr = 4;
  tiny.heads[TaskId::T1] = {{}, 4};
  tiny.heads[TaskId::T2] = {{}, 1};
  WorldConfig wc;
  wc.d_in = 3;
  wc.d_z = 8;
  WorldFn world(wc);
  Splits splits = make_splits(world, all_task_specs(), 64, 16, 16, 1);
  ParamSet params = init_params(tiny, {TaskId::T1, TaskId::T2}, 1);
  Episode ep = sample_episode(EpisodeCombo{{TaskId::T1, TaskId::T2}}, splits.train,
                              8, 8, 1);
  MetaConfig cfg;
  for (auto _ : state) {
    auto g = exact_meta_gradient(params, ep, cfg, 1e-4);
    benchmark::DoNotOptimize(g[0]);
  }
}
BENCHMARK(BM_ExactMetaGradient);

}  // namespace

BENCHMARK_MAIN();
