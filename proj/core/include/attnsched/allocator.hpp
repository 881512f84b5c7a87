#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "attnsched/depgraph.hpp"
#include "attnsched/mapper.hpp"
#include "attnsched/scheduler.hpp"

namespace attnsched {

enum class Objective { Latency, Energy, PeakMemory, Weighted };

std::string_view to_string(Objective o);
Objective objective_from_string(std::string_view s);

struct GAConfig {
  std::size_t population = 32;
  std::size_t generations = 50;
  double mutation_rate = 0.1;
  double crossover_rate = 0.9;
  std::uint64_t seed = 1;
  Objective objective = Objective::Latency;
  double weight = 0.5;  // latency share under Weighted
  std::size_t threads = 1;
  /// Individuals injected into generation 0 (repaired, then evaluated).
  std::vector<Allocation> seeds;

  /// Throws std::invalid_argument when out of range.
  void validate() const;
};

struct Metrics {
  std::uint64_t makespan = 0;
  double energy = 0.0;
  std::uint64_t peak = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

/// Schedules `a` and returns its metrics. Deterministic.
Metrics evaluate_allocation(const Allocation& a, const NodeGraph& ng, const CostModel& costs,
                            const SchedulePolicy& policy, const ScheduleTemplate* tmpl = nullptr,
                            const ScheduleContext* ctx = nullptr);

/// Moves every unsupported gene to the nearest supporting resource by id
/// (ties to the lower id), then completes transposes.
Allocation repair_allocation(const LayerGraph& graph, const HardwareSpec& hw, Allocation a);

struct GenerationLog {
  std::size_t generation = 0;
  double best_fitness = 0.0;
  Metrics best;
  std::size_t evaluations = 0;  // cumulative
};

struct SearchResult {
  Allocation allocation;
  Metrics metrics;
  std::vector<GenerationLog> log;
  std::size_t evaluations = 0;  // fitness requests, cache hits included
  std::size_t unique_evaluations = 0;
};

/// Genetic search over per-layer resources: tournament selection of size 2,
/// single-point crossover, per-gene mutation. Survivors are the best
/// distinct individuals of parents and offspring, so the best ever is kept.
/// Half of the random initial population is head-uniform (all layers of a
/// head on one core, vector work on that core's SIMD unit when it has one);
/// every generation adds population/12 (at least one) such immigrants.
SearchResult genetic_search(const NodeGraph& ng, const CostModel& costs, const SchedulePolicy& policy,
                            const GAConfig& cfg, const ScheduleTemplate* tmpl = nullptr);

/// Uniform random allocations with the same budget accounting.
SearchResult random_search(const NodeGraph& ng, const CostModel& costs, const SchedulePolicy& policy,
                           std::size_t budget, std::uint64_t seed, Objective objective,
                           const ScheduleTemplate* tmpl = nullptr);

/// "generation,best_fitness,makespan,energy,peak_words,evaluations".
std::string ga_log_csv(const SearchResult& r);

}  // namespace attnsched
