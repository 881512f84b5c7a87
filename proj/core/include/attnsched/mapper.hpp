#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attnsched/depgraph.hpp"
#include "attnsched/hwmodel.hpp"
#include "attnsched/workload.hpp"

namespace attnsched {

/// Matmul loop dimensions: O[R][T] += I1[R][S] * I2[S][T].
enum class LoopDim { R, S, T };

std::string_view to_string(LoopDim d);
LoopDim loop_dim_from_string(std::string_view s);

struct LoopExtents {
  std::size_t r = 1;
  std::size_t s = 1;
  std::size_t t = 1;

  std::size_t operator[](LoopDim d) const {
    return d == LoopDim::R ? r : d == LoopDim::S ? s : t;
  }
  std::uint64_t macs() const { return std::uint64_t{r} * s * t; }
};

/// Loop extents of a node (R, S, T for matmuls; rows, 1, cols otherwise).
LoopExtents node_extents(const ComputationNode& node, const LayerGraph& graph);
LoopExtents layer_extents(const Layer& layer);

struct Mapping {
  std::optional<LoopDim> spatial_rows;  // unrolled across PE rows
  std::optional<LoopDim> spatial_cols;  // unrolled across PE cols
  /// Forced unroll per array axis; 0 = min(extent, axis size).
  std::array<std::size_t, 2> unroll{0, 0};
  /// All three dims, outermost first; a spatial dim iterates over its
  /// remaining ceil(extent / unroll) steps. The register tile is the spatial
  /// unroll.
  std::array<LoopDim, 3> temporal_order{LoopDim::R, LoopDim::S, LoopDim::T};

  bool is_spatial(LoopDim d) const { return spatial_rows == d || spatial_cols == d; }
  std::size_t unroll_of(LoopDim d, std::size_t extent, const Core& core) const;
  /// Temporal iteration count of a dim.
  std::size_t steps(LoopDim d, std::size_t extent, const Core& core) const;

  friend bool operator==(const Mapping&, const Mapping&) = default;
};

std::string describe(const Mapping& m);

/// Bandwidth and energy cost of the path feeding one operand.
struct OperandPath {
  double bw = 1e18;  // words/cycle
  std::uint64_t setup = 0;
  std::string level;
  double access_cost = 0.0;
};

struct NodeFeeds {
  OperandPath i1;
  OperandPath i2;
  OperandPath o;
  double register_cost = 0.0;  // per register-file access

  /// Unlimited bandwidth, zero energy.
  static NodeFeeds ample() { return {}; }
};

/// Feeds of `layer` on `hw` when every operand goes through its feeding level.
NodeFeeds default_feeds(const HardwareSpec& hw, const Layer& layer);

struct NodeCost {
  std::uint64_t compute_cycles = 0;
  std::uint64_t stall_cycles = 0;
  double energy = 0.0;
  std::map<std::string, double> energy_by_level;
  /// Words read or written per operand, for re-billing fused edges.
  std::array<std::uint64_t, 3> operand_words{0, 0, 0};  // I1, I2, O

  std::uint64_t total() const { return compute_cycles + stall_cycles; }
};

/// Cost of one matmul node on a PE-array core under `mapping`.
/// Throws std::invalid_argument when a forced unroll exceeds its array axis
/// or both spatial axes carry the same dim.
NodeCost node_latency(const LoopExtents& node, const Core& core, const Mapping& mapping,
                      const NodeFeeds& feeds);

/// Cost of any node on a resource. Transposes cost nothing; softmax makes
/// two passes over its rows at `lanes` words/cycle (peak MACs for a core).
NodeCost node_cost(const ComputationNode& node, const LayerGraph& graph,
                   const HardwareSpec& hw, ResourceId resource, const Mapping& mapping);

/// Footprint of one top-loop band of the output, in words.
std::uint64_t band_footprint(const LoopExtents& layer, const Core& core, const Mapping& m);

/// Every candidate: 13 spatial choices x 6 temporal orders, [R,S,T] first.
std::vector<Mapping> enumerate_mappings();

/// Minimises (latency, top loop is not R, band footprint, energy) over
/// enumerate_mappings(). Non-matmul layers get the default row-major mapping.
/// Throws std::invalid_argument if the core does not support the layer kind.
Mapping optimize_mapping(const Layer& layer, const Core& core,
                         const NodeFeeds& feeds = NodeFeeds::ample());

/// Same ordering, but latency and energy are summed over the given node
/// shapes (shape, count) of an already split layer.
Mapping optimize_mapping_for_nodes(const Layer& layer,
                                   const std::vector<std::pair<LoopExtents, std::size_t>>& shapes,
                                   const Core& core, const NodeFeeds& feeds = NodeFeeds::ample());

/// Split along the mapping's top temporal loop, one band per spatial unroll.
SplitSpec split_for_mapping(const Layer& layer, const Core& core, const Mapping& m);

/// Per-layer forced mappings, keyed by layer name:
/// {"h0.Q": {"spatial": ["S", "T"], "temporal": ["R", "S", "T"]}}.
/// A null spatial entry leaves that axis idle.
using MappingOverrides = std::map<std::string, Mapping>;
MappingOverrides parse_mapping_overrides(std::string_view text);

/// Mappings and node costs for every (node, supporting resource) pair.
/// Built eagerly; read-only afterwards.
class CostModel {
 public:
  CostModel(const NodeGraph& ng, const HardwareSpec& hw, const MappingOverrides& overrides = {});

  const HardwareSpec& hardware() const { return hw_; }
  /// Throws std::invalid_argument if the resource cannot run the layer.
  const Mapping& mapping(LayerId layer, ResourceId r) const;
  const NodeCost& cost(NodeId node, ResourceId r) const;
  bool supports(LayerId layer, ResourceId r) const;

 private:
  HardwareSpec hw_;
  std::size_t resources_;
  std::vector<std::optional<Mapping>> mappings_;  // [layer * resources + r]
  std::vector<std::optional<NodeCost>> costs_;    // [node * resources + r]
};

}  // namespace attnsched
