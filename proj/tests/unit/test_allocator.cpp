#include <gtest/gtest.h>

#include <algorithm>

#include "attnsched/allocator.hpp"

using namespace attnsched;

namespace {

struct Fixture {
  LayerGraph graph;
  HardwareSpec hw;
  SchedulePolicy policy;
  ScheduleTemplate tmpl;
  NodeGraph ng;
  CostModel costs;

  Fixture(LayerGraph g, HardwareSpec h, const std::string& name)
      : graph(std::move(g)),
        hw(std::move(h)),
        policy(make_policy(name)),
        tmpl(apply_template(name, graph)),
        ng(fine_grained_graph(graph, tmpl.split)),
        costs(ng, hw) {}

  static SchedulePolicy make_policy(const std::string& name) {
    SchedulePolicy p;
    p.mode = ScheduleMode::Template;
    p.template_name = name;
    return p;
  }

  Metrics eval(const Allocation& a) const { return evaluate_allocation(a, ng, costs, policy, &tmpl); }

  Allocation heads_on(const std::vector<std::size_t>& core_of_head) const {
    Allocation a(graph.size());
    for (const auto& l : graph.layers()) {
      const std::size_t core = core_of_head[l.head];
      a[l.id] = l.kind == LayerKind::Softmax && !hw.simd_units.empty() ? hw.cores.size() + core : core;
    }
    return complete_allocation(graph, hw, a);
  }
};

constexpr const char* kTemplate = "lbl_memory_optimal_swapped";

std::uint64_t single_head_makespan(std::size_t m, std::size_t n) {
  SchedulePolicy p = Fixture::make_policy(kTemplate);
  return run_schedule(build_attention_head(m, n), builtin_platform("single64x64"), p).result.makespan;
}

GAConfig small_ga(std::uint64_t seed) {
  GAConfig cfg;
  cfg.population = 16;
  cfg.generations = 12;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST(EvaluateAllocation, SingleCoreEqualsDirectSchedule) {
  const Fixture s(build_attention_head(64, 128), builtin_platform("single64x64"), "fuse_q_qkt");
  const Allocation a = default_allocation(s.graph, s.hw);
  const auto direct = run_schedule(s.graph, s.hw, s.policy, a).result;
  const Metrics m = s.eval(a);
  EXPECT_EQ(m.makespan, direct.makespan);
  EXPECT_EQ(m.peak, direct.peak);
  EXPECT_DOUBLE_EQ(m.energy, direct.energy);
  const ScheduleContext ctx(s.ng);
  EXPECT_EQ(evaluate_allocation(a, s.ng, s.costs, s.policy, &s.tmpl, &ctx), m);
}

TEST(EvaluateAllocation, HeadPerCoreMatchesSingleHead) {
  const Fixture s(build_mhsa(64, 64, 4), builtin_platform("quad64x64"), kTemplate);
  EXPECT_EQ(s.eval(s.heads_on({0, 1, 2, 3})).makespan, single_head_makespan(64, 64));
  EXPECT_EQ(s.eval(head_per_core_allocation(s.graph, s.hw)).makespan, single_head_makespan(64, 64));
}

TEST(EvaluateAllocation, AllHeadsOnOneCoreSerialise) {
  const Fixture s(build_mhsa(64, 64, 4), builtin_platform("quad64x64"), kTemplate);
  EXPECT_EQ(s.eval(s.heads_on({2, 2, 2, 2})).makespan, 4 * single_head_makespan(64, 64));
}

TEST(GeneticSearch, FindsHeadPerCoreOptimum) {
  const Fixture s(build_mhsa(64, 64, 4), builtin_platform("quad64x64"), kTemplate);
  // Oracle: every head-uniform assignment of 4 heads to 4 cores.
  std::uint64_t best = UINT64_MAX;
  for (std::size_t code = 0; code < 256; ++code) {
    const std::vector<std::size_t> cores{code % 4, code / 4 % 4, code / 16 % 4, code / 64 % 4};
    best = std::min(best, s.eval(s.heads_on(cores)).makespan);
  }
  EXPECT_EQ(best, single_head_makespan(64, 64));
  GAConfig cfg;
  cfg.population = 24;
  cfg.generations = 24;
  cfg.seed = 3;
  const SearchResult r = genetic_search(s.ng, s.costs, s.policy, cfg, &s.tmpl);
  EXPECT_EQ(r.metrics.makespan, best);
  EXPECT_EQ(s.eval(r.allocation), r.metrics);
  std::vector<std::size_t> used;
  for (const auto& l : s.graph.layers()) used.push_back(s.hw.home_core(r.allocation[l.id]));
  std::sort(used.begin(), used.end());
  EXPECT_EQ(std::unique(used.begin(), used.end()) - used.begin(), 4);
}

TEST(GeneticSearch, OptimumAcrossSeeds) {
  const Fixture s(build_mhsa(64, 64, 4), builtin_platform("quad64x64"), "fuse_q_qkt");
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    GAConfig cfg;
    cfg.population = 24;
    cfg.generations = 24;
    cfg.seed = seed;
    const SearchResult r = genetic_search(s.ng, s.costs, s.policy, cfg, &s.tmpl);
    EXPECT_EQ(r.metrics.makespan, single_head_makespan(64, 64)) << "seed " << seed;
  }
}

TEST(GeneticSearch, SingleCoreConvergesAtGenerationZero) {
  const Fixture s(build_attention_head(32, 32), builtin_platform("single64x64"), "fuse_q_qkt");
  const SearchResult r = genetic_search(s.ng, s.costs, s.policy, small_ga(1), &s.tmpl);
  ASSERT_FALSE(r.log.empty());
  EXPECT_EQ(r.log.front().best, r.metrics);
  EXPECT_EQ(r.metrics, s.eval(default_allocation(s.graph, s.hw)));
}

TEST(GeneticSearch, Deterministic) {
  const Fixture s(build_mhsa(32, 32, 2), builtin_platform("quad64x64"), kTemplate);
  const SearchResult a = genetic_search(s.ng, s.costs, s.policy, small_ga(11), &s.tmpl);
  const SearchResult b = genetic_search(s.ng, s.costs, s.policy, small_ga(11), &s.tmpl);
  EXPECT_EQ(a.allocation, b.allocation);
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(ga_log_csv(a), ga_log_csv(b));
  GAConfig threaded = small_ga(11);
  threaded.threads = 3;
  const SearchResult c = genetic_search(s.ng, s.costs, s.policy, threaded, &s.tmpl);
  EXPECT_EQ(a.allocation, c.allocation);
}

TEST(GeneticSearch, ElitismNonIncreasing) {
  const Fixture s(build_mhsa(32, 64, 3), builtin_platform("quad64x64"), kTemplate);
  for (auto obj : {Objective::Latency, Objective::PeakMemory, Objective::Energy, Objective::Weighted}) {
    GAConfig cfg = small_ga(5);
    cfg.objective = obj;
    const SearchResult r = genetic_search(s.ng, s.costs, s.policy, cfg, &s.tmpl);
    ASSERT_EQ(r.log.size(), cfg.generations + 1);
    for (std::size_t i = 1; i < r.log.size(); ++i) EXPECT_LE(r.log[i].best_fitness, r.log[i - 1].best_fitness);
    EXPECT_EQ(r.evaluations, cfg.population * (cfg.generations + 1));
    EXPECT_LE(r.unique_evaluations, r.evaluations);
  }
}

TEST(GeneticSearch, NotWorseThanRandomBaseline) {
  const Fixture s(build_mhsa(32, 64, 4), builtin_platform("quad64x64"), kTemplate);
  for (std::uint64_t seed : {1, 2, 3}) {
    const GAConfig cfg = small_ga(seed);
    const SearchResult ga = genetic_search(s.ng, s.costs, s.policy, cfg, &s.tmpl);
    const SearchResult rnd =
        random_search(s.ng, s.costs, s.policy, ga.evaluations, seed, Objective::Latency, &s.tmpl);
    EXPECT_EQ(rnd.evaluations, ga.evaluations);
    EXPECT_LE(ga.metrics.makespan, rnd.metrics.makespan) << "seed " << seed;
  }
}

TEST(GeneticSearch, HeadsBeyondCores) {
  // h >= c identical cores: makespan <= ceil(h/c) x single head.
  const Fixture s(build_mhsa(32, 32, 6), builtin_platform("quad64x64"), kTemplate);
  const SearchResult r = genetic_search(s.ng, s.costs, s.policy, small_ga(2), &s.tmpl);
  EXPECT_LE(r.metrics.makespan, 2 * single_head_makespan(32, 32));
}

TEST(GeneticSearch, SeedsAreUsed) {
  const Fixture s(build_mhsa(32, 32, 4), builtin_platform("quad64x64"), kTemplate);
  GAConfig cfg = small_ga(9);
  cfg.generations = 0;
  cfg.seeds = {head_per_core_allocation(s.graph, s.hw)};
  const SearchResult r = genetic_search(s.ng, s.costs, s.policy, cfg, &s.tmpl);
  EXPECT_EQ(r.metrics.makespan, single_head_makespan(32, 32));
}

TEST(Repair, MovesToNearestSupportingResource) {
  const HardwareSpec quad = builtin_platform("quad64x64");
  const LayerGraph g = build_attention_head(8, 8);
  Allocation a(g.size(), 2);
  const Allocation r = repair_allocation(g, quad, a);
  for (const auto& l : g.layers()) {
    EXPECT_TRUE(quad.supports(r[l.id], l.kind)) << l.name;
    if (l.kind == LayerKind::Softmax) EXPECT_EQ(r[l.id], 4u);
    else EXPECT_EQ(r[l.id], 2u);
  }
}

TEST(GAConfig, Validate) {
  GAConfig c;
  EXPECT_NO_THROW(c.validate());
  c.population = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = GAConfig{};
  c.mutation_rate = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = GAConfig{};
  c.weight = -0.1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(GAConfig{}.population, 32u);
  EXPECT_EQ(GAConfig{}.generations, 50u);
}

TEST(Objective, Names) {
  for (auto o : {Objective::Latency, Objective::Energy, Objective::PeakMemory, Objective::Weighted}) {
    EXPECT_EQ(objective_from_string(to_string(o)), o);
  }
  EXPECT_THROW(objective_from_string("speed"), std::invalid_argument);
}

TEST(GaLog, CsvShape) {
  const Fixture s(build_attention_head(16, 16), builtin_platform("quad64x64"), kTemplate);
  const SearchResult r = genetic_search(s.ng, s.costs, s.policy, small_ga(4), &s.tmpl);
  const std::string csv = ga_log_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "generation,best_fitness,makespan,energy,peak_words,evaluations");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), r.log.size() + 1);
}
