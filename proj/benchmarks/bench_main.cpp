// Copyright (c) 2026, The adaptmerge authors
// SPDX-License-Identifier: Apache-2.0
//

#include <benchmark/benchmark.h>

#include <random>

#include "adaptmerge/align.hpp"
#include "adaptmerge/merge.hpp"
#include "adaptmerge/ot.hpp"
#include "adaptmerge/store.hpp"
#include "adaptmerge/synth.hpp"

namespace adaptmerge {
namespace {

Matrix random_cost(std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix c(m, m);
  for (double& v : c.data()) v = u(rng);
  return c;
}

void BM_SolveExact(benchmark::State& state) {
  const Matrix c = random_cost(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(solve_exact(c));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SolveExact)->RangeMultiplier(2)->Range(4, 256)->Complexity();

void BM_Sinkhorn(benchmark::State& state) {
  const Matrix c = random_cost(static_cast<std::size_t>(state.range(0)), 2);
  SinkhornOptions opts;
  opts.epsilon = 0.01;
  for (auto _ : state) benchmark::DoNotOptimize(solve_sinkhorn(c, opts));
}
BENCHMARK(BM_Sinkhorn)->RangeMultiplier(2)->Range(4, 64);

std::vector<AdapterStack> fixture(std::size_t d, std::size_t n) {
  std::vector<AdapterStack> stacks;
  for (std::size_t i = 0; i < n; ++i) stacks.push_back(gen_adapter({d, 4, 2, Nonlinearity::relu}, derive_seed(3, i)));
  return stacks;
}

void BM_MergeWts(benchmark::State& state) {
  const auto stacks = fixture(static_cast<std::size_t>(state.range(0)), 4);
  MergeStrategy s;
  s.kind = MergeKind::ot_wts;
  for (auto _ : state) benchmark::DoNotOptimize(merge(stacks, s));
}
BENCHMARK(BM_MergeWts)->Arg(32)->Arg(128)->Arg(512);

void BM_MergeActs(benchmark::State& state) {
  const std::size_t d = static_cast<std::size_t>(state.range(0));
  const auto stacks = fixture(d, 4);
  const ProbeBatch probe = gen_probe(d, 256, 2, 4);
  MergeStrategy s;
  s.kind = MergeKind::ot_acts;
  for (auto _ : state) benchmark::DoNotOptimize(merge(stacks, s, &probe));
}
BENCHMARK(BM_MergeActs)->Arg(32)->Arg(128);

void BM_MergeAvg(benchmark::State& state) {
  const auto stacks = fixture(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) benchmark::DoNotOptimize(merge_avg(stacks));
}
BENCHMARK(BM_MergeAvg)->Arg(32)->Arg(512);

void BM_Encode(benchmark::State& state) {
  const AdapterStack s = fixture(static_cast<std::size_t>(state.range(0)), 1).front();
  for (auto _ : state) benchmark::DoNotOptimize(encode_adapter(s));
}
BENCHMARK(BM_Encode)->Arg(32)->Arg(768);

void BM_Decode(benchmark::State& state) {
  const Bytes b = encode_adapter(fixture(static_cast<std::size_t>(state.range(0)), 1).front());
  for (auto _ : state) benchmark::DoNotOptimize(decode_adapter(b));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * b.size()));
}
BENCHMARK(BM_Decode)->Arg(32)->Arg(768);

}  // namespace
}  // namespace adaptmerge

BENCHMARK_MAIN();
