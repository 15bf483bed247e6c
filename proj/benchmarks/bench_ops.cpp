#include <benchmark/benchmark.h>

#include "npgrid/autodiff.hpp"
#include "npgrid/gp_tasks.hpp"
#include "npgrid/random.hpp"
#include "npgrid/setconv.hpp"

using namespace npgrid;

static void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const NdArray a = standard_normal(rng, {n, n});
  const NdArray b = standard_normal(rng, {n, n});
  for (auto _ : state) {
    Graph g;
    Var x = g.leaf(a);
    Var y = g.leaf(b);
    g.backward(ad::sum(ad::matmul(x, y)));
    benchmark::DoNotOptimize(g.grad(x));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(16)->Arg(64)->Arg(128);

static void BM_Conv1dForwardBackward(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const NdArray signal = standard_normal(rng, {32, length});
  const NdArray kernels = standard_normal(rng, {32, 32, 5});
  const NdArray bias({32}, 0.1);
  for (auto _ : state) {
    Graph g;
    Var s = g.leaf(signal);
    Var k = g.leaf(kernels);
    Var out = ad::conv1d(s, k, g.leaf(bias));
    g.backward(ad::sum(out));
    benchmark::DoNotOptimize(g.grad(k));
  }
}
BENCHMARK(BM_Conv1dForwardBackward)->Arg(64)->Arg(140);

static void BM_SetConvEncode(benchmark::State& state) {
  Rng rng(3);
  const RawSeries s = sample_gp_task(KernelSpec{}, 100, rng);
  const Task task = make_task(s, static_cast<std::size_t>(state.range(0)), rng);
  const Grid grid = build_grid(-1.0, 1.0, 32, 0.1);
  for (auto _ : state) {
    Graph g(false);
    auto rep = encode_to_grid(g, task.x_context, g.constant(task.y_context), grid,
                              g.scalar(SetConvParams::for_resolution(32).log_length_scale));
    benchmark::DoNotOptimize(rep.features.value());
  }
}
BENCHMARK(BM_SetConvEncode)->Arg(5)->Arg(50);

static void BM_GpSample(benchmark::State& state) {
  Rng rng(4);
  const auto kind = static_cast<KernelKind>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sample_gp_task(KernelSpec{kind}, 100, rng));
}
BENCHMARK(BM_GpSample)->Arg(0)->Arg(1)->Arg(2);
