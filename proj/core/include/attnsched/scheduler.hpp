#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "attnsched/depgraph.hpp"
#include "attnsched/hwmodel.hpp"
#include "attnsched/mapper.hpp"
#include "attnsched/workload.hpp"

namespace attnsched {

enum class ScheduleMode { LayerByLayer, LayerFusedAuto, Template };
enum class PriorityObjective { Latency, Memory, Weighted };

struct SchedulePolicy {
  ScheduleMode mode = ScheduleMode::LayerByLayer;
  PriorityObjective priority = PriorityObjective::Latency;
  double lambda = 0.5;  // weight of latency under Weighted
  std::string template_name;  // Template mode only

  /// "latency", "memory" or "weighted:<lambda>". Throws std::invalid_argument.
  static PriorityObjective parse_priority(std::string_view text, double& lambda);
};

std::string describe(const SchedulePolicy& p);

/// Split plan, phase order and fused producers for one schedule shape.
struct ScheduleTemplate {
  std::string name;
  SplitPlan split;
  /// Execution phases; a layer waits for every node of its predecessor
  /// layers that sit in earlier phases. Inside a phase only node-level
  /// dependencies apply.
  std::vector<std::vector<LayerId>> phases;
  /// Producers whose outputs stay in registers when the consumers run on a
  /// connected resource in the same phase.
  std::set<LayerId> fused;

  std::size_t phase_of(LayerId layer) const;
};

/// lbl_memory_optimal, lbl_memory_optimal_swapped, fuse_q_qkt, fuse_qkt_qktv,
/// fuse_q_qkt_qktv.
const std::vector<std::string>& template_names();

/// Template for every head of an attention graph. Throws
/// std::invalid_argument for an unknown name or a graph without roles.
ScheduleTemplate apply_template(std::string_view name, const LayerGraph& graph);
ScheduleTemplate apply_template(std::string_view name, std::size_t m, std::size_t n);

/// One row-band node per row for every layer; transposes stay whole.
SplitPlan row_split(const LayerGraph& graph);

/// Split along each layer's optimal top loop on the first core that runs it.
SplitPlan mapping_split(const LayerGraph& graph, const HardwareSpec& hw);

/// Resource per layer, indexed by layer id.
using Allocation = std::vector<ResourceId>;

/// Every layer on the first resource supporting it.
Allocation default_allocation(const LayerGraph& graph, const HardwareSpec& hw);
/// Head h on core h mod #cores; softmax on that core's SIMD unit if any.
Allocation head_per_core_allocation(const LayerGraph& graph, const HardwareSpec& hw);
/// Moves transposes onto their producer's resource and checks support.
/// Throws std::invalid_argument on a wrong size or unsupported target.
Allocation complete_allocation(const LayerGraph& graph, const HardwareSpec& hw, Allocation a);

struct ScheduledNode {
  NodeId node = 0;
  ResourceId resource = 0;
  std::uint64_t start = 0;
  std::uint64_t end = 0;
};

struct MemorySample {
  std::uint64_t time = 0;
  std::uint64_t words = 0;
  friend bool operator==(const MemorySample&, const MemorySample&) = default;
};

/// Piecewise-constant active feature words. A time may appear twice: once
/// after allocations and streamed-operand releases, once after stationary
/// operands are released.
struct MemoryTrace {
  std::vector<MemorySample> samples;

  std::uint64_t peak() const;
  std::uint64_t initial() const { return samples.empty() ? 0 : samples.front().words; }
  std::uint64_t final_words() const { return samples.empty() ? 0 : samples.back().words; }
};

struct ScheduleResult {
  std::vector<ScheduledNode> nodes;  // indexed by node id
  MemoryTrace trace;
  std::vector<MemoryTrace> core_traces;  // one per core
  std::set<LayerId> realized_fused;
  double energy = 0.0;
  std::uint64_t makespan = 0;
  std::uint64_t peak = 0;
};

/// Allocation-independent data derived from a node graph (topological
/// order, storage blocks and their consumers). Build once and reuse across
/// many schedule() calls on the same graph.
class ScheduleContext {
 public:
  explicit ScheduleContext(const NodeGraph& ng);
  ~ScheduleContext();
  ScheduleContext(const ScheduleContext&) = delete;
  ScheduleContext& operator=(const ScheduleContext&) = delete;

  struct Impl;
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

/// Event-driven non-delay list scheduling. Template mode requires `tmpl`,
/// whose split must be the one `ng` was built from.
/// Throws std::logic_error on a cyclic graph or a deadlock.
ScheduleResult schedule(const NodeGraph& ng, const CostModel& costs, const Allocation& alloc,
                        const SchedulePolicy& policy, const ScheduleTemplate* tmpl = nullptr,
                        const ScheduleContext* ctx = nullptr);

/// Active feature memory of a finished schedule. With `core`, only data held
/// by that core (each core keeps its own copy of the graph input).
MemoryTrace memory_trace(const NodeGraph& ng, const std::vector<ScheduledNode>& sched,
                         const HardwareSpec& hw, const std::set<LayerId>& realized_fused,
                         std::optional<std::size_t> core = std::nullopt);

std::uint64_t makespan(const std::vector<ScheduledNode>& sched);
std::uint64_t peak_memory(const MemoryTrace& trace);

/// Graph, cost model and schedule for one policy, built end to end.
struct Run {
  NodeGraph graph;
  CostModel costs;
  Allocation allocation;
  SchedulePolicy policy;
  std::optional<ScheduleTemplate> tmpl;
  ScheduleResult result;
};

/// Builds the node graph (template split or mapping split), costs it and
/// schedules it. `alloc` defaults to default_allocation().
Run run_schedule(const LayerGraph& graph, const HardwareSpec& hw, const SchedulePolicy& policy,
                 std::optional<Allocation> alloc = std::nullopt,
                 const MappingOverrides& overrides = {});

std::string schedule_json(const NodeGraph& ng, const HardwareSpec& hw, const ScheduleResult& r);
std::string memtrace_csv(const MemoryTrace& trace);
std::string gantt_svg(const NodeGraph& ng, const HardwareSpec& hw, const ScheduleResult& r);
std::string gantt_ascii(const NodeGraph& ng, const HardwareSpec& hw, const ScheduleResult& r,
                        std::size_t width = 100);

}  // namespace attnsched
