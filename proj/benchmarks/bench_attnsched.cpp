#include <benchmark/benchmark.h>

#include "attnsched/allocator.hpp"

using namespace attnsched;

static void BM_Dependencies(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const LayerGraph g = build_attention_head(m, 64);
  const SplitPlan plan = uniform_split(g, 1);
  for (auto _ : state) benchmark::DoNotOptimize(fine_grained_graph(g, plan));
}
BENCHMARK(BM_Dependencies)->RangeMultiplier(2)->Range(64, 1024);

static void BM_BruteForceDependencies(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const LayerGraph g = build_attention_head(m, 16);
  const NodeGraph ng = fine_grained_graph(g, uniform_split(g, 1));
  for (auto _ : state) benchmark::DoNotOptimize(brute_force_dependencies(ng.nodes(), g));
}
BENCHMARK(BM_BruteForceDependencies)->RangeMultiplier(2)->Range(8, 64);

static void BM_ScheduleTemplate(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const HardwareSpec hw = builtin_platform("single64x64");
  const LayerGraph g = build_attention_head(m, 256);
  const ScheduleTemplate t = apply_template("fuse_q_qkt", g);
  const NodeGraph ng = fine_grained_graph(g, t.split);
  const CostModel costs(ng, hw);
  const ScheduleContext ctx(ng);
  const Allocation a = default_allocation(g, hw);
  SchedulePolicy p;
  p.mode = ScheduleMode::Template;
  p.template_name = t.name;
  for (auto _ : state) benchmark::DoNotOptimize(schedule(ng, costs, a, p, &t, &ctx));
}
BENCHMARK(BM_ScheduleTemplate)->RangeMultiplier(2)->Range(64, 512);

static void BM_MappingSearch(benchmark::State& state) {
  const LayerGraph g = build_attention_head(128, 1024);
  Core core;
  core.array_rows = 64;
  core.array_cols = 64;
  core.supports = {LayerKind::MatMulWeights};
  for (auto _ : state) benchmark::DoNotOptimize(optimize_mapping(g.layer(0), core));
}
BENCHMARK(BM_MappingSearch);

static void BM_GeneticSearch(benchmark::State& state) {
  const HardwareSpec hw = builtin_platform("quad64x64");
  const LayerGraph g = build_mhsa(64, 64, 4);
  const ScheduleTemplate t = apply_template("fuse_q_qkt", g);
  const NodeGraph ng = fine_grained_graph(g, t.split);
  const CostModel costs(ng, hw);
  SchedulePolicy p;
  p.mode = ScheduleMode::Template;
  p.template_name = t.name;
  GAConfig cfg;
  cfg.population = 16;
  cfg.generations = 8;
  for (auto _ : state) benchmark::DoNotOptimize(genetic_search(ng, costs, p, cfg, &t));
}
BENCHMARK(BM_GeneticSearch)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
