#include "cltheory/kernel.hpp"
#include "cltheory/multi_head.hpp"
#include "cltheory/order_params.hpp"
#include "cltheory/single_head.hpp"
#include "cltheory/taskgen.hpp"

#include <benchmark/benchmark.h>

using namespace cltheory;

namespace {

KernelConfig config(int n0, int depth, Lambda lambda = Lambda::infinite()) {
  KernelConfig c;
  c.depth = depth;
  c.input_dim = n0;
  c.lambda = lambda;
  return c;
}

void BM_NtkKernel(benchmark::State& state) {
  const int p = static_cast<int>(state.range(0));
  const auto tasks = gen_teacher_pair(p, 100, 0.5, 0.5, 1);
  const KernelConfig c = config(100, static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(ntk_kernel(tasks[0].x, tasks[1].x, c));
  state.SetComplexityN(p);
}
BENCHMARK(BM_NtkKernel)->ArgsProduct({{100, 200, 400}, {1, 3}})->Unit(benchmark::kMillisecond);

void BM_SingleHeadSequence(benchmark::State& state) {
  const int p = static_cast<int>(state.range(0));
  const auto pair = gen_teacher_pair(p, 100, 0.5, 0.5, 2);
  const KernelConfig c = config(100, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fit_sequence(pair, c, SolveMode::FullGibbs));
}
BENCHMARK(BM_SingleHeadSequence)->Arg(100)->Arg(200)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_MultiHeadSolve(benchmark::State& state) {
  const auto pair = gen_teacher_pair(200, 100, 0.5, 1.0, 3);
  const KernelConfig c = config(100, 1);
  const Dataset a = normalize_labels(pair[0], c);
  const Dataset b = normalize_labels(pair[1], c);
  const double alpha = static_cast<double>(state.range(0)) / 100.0;
  for (auto _ : state) benchmark::DoNotOptimize(solve_multi_head(a, b, c, alpha).forgetting());
}
BENCHMARK(BM_MultiHeadSolve)->Arg(50)->Arg(150)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_OrderParameters(benchmark::State& state) {
  const auto pair = gen_teacher_pair(200, 100, 0.5, 0.5, 4);
  const KernelConfig c = config(100, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(compute_order_params(pair[0], pair[1], c));
}
BENCHMARK(BM_OrderParameters)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
