#include <benchmark/benchmark.h>

#include "npgrid/evaluation.hpp"
#include "npgrid/training.hpp"

using namespace npgrid;

namespace {

Task desk_task() {
  Rng rng(7);
  const RawSeries s = sample_gp_task(KernelSpec{}, 100, rng);
  return make_task(s, 20, rng);
}

ModelConfig desk_model(std::int64_t kind) {
  ModelConfig c;
  c.kind = static_cast<ModelKind>(kind);
  return c;
}

}  // namespace

// One training step's worth of work for a single task: loss and all gradients.
static void BM_TaskLossAndGrads(benchmark::State& state) {
  const ModelConfig cfg = desk_model(state.range(0));
  const ParamMap params = init_params(cfg, 1);
  const Task task = desk_task();
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(task_loss_and_grads(cfg, params, task, 1, rng));
  state.SetLabel(to_string(cfg.kind));
}
BENCHMARK(BM_TaskLossAndGrads)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

static void BM_PredictiveLl(benchmark::State& state) {
  const ModelConfig cfg = desk_model(state.range(0));
  const ParamMap params = init_params(cfg, 1);
  const Task task = desk_task();
  Rng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(task_log_likelihood(cfg, params, task, 16, rng));
  state.SetLabel(to_string(cfg.kind) + ", n_z 16");
}
BENCHMARK(BM_PredictiveLl)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
