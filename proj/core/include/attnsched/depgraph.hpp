#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "attnsched/rect_index.hpp"
#include "attnsched/workload.hpp"

namespace attnsched {

using NodeId = std::size_t;

/// Top temporal loop a layer is split along: output rows (R) or cols (T).
enum class SplitAxis { Rows, Cols };

struct SplitSpec {
  SplitAxis axis = SplitAxis::Rows;
  std::size_t tile = 1;
};

using SplitPlan = std::map<LayerId, SplitSpec>;

/// Rectangle of one tensor. `tensor` is a layer id or kGraphInput.
struct Region {
  LayerId tensor = kGraphInput;
  Rect rect;

  std::size_t words() const { return rect.area(); }
  friend bool operator==(const Region&, const Region&) = default;
};

struct ComputationNode {
  NodeId id = 0;
  LayerId layer = 0;
  std::size_t index = 0;  // position within its layer
  LayerKind kind = LayerKind::MatMulWeights;
  Region output;
  std::uint64_t mac_count = 0;
};

struct OperandRegion {
  std::size_t slot = 0;
  Region region;
};

struct DependencyEdge {
  NodeId producer = 0;
  NodeId consumer = 0;
  std::uint64_t words = 0;

  friend bool operator==(const DependencyEdge&, const DependencyEdge&) = default;
  friend auto operator<=>(const DependencyEdge& a, const DependencyEdge& b) {
    if (auto c = a.consumer <=> b.consumer; c != 0) return c;
    if (auto c = a.producer <=> b.producer; c != 0) return c;
    return a.words <=> b.words;
  }
};

/// Splits a layer into contiguous bands of `tile` rows or cols of its output;
/// the last band absorbs the remainder. Node ids are local (0..n-1).
/// Throws std::invalid_argument for tile == 0 and for column splits of
/// non-matmul layers.
std::vector<ComputationNode> split_layer(const Layer& layer, SplitAxis axis,
                                         std::size_t tile);

/// Feature regions a node reads, one per feature operand. Weight operands
/// are omitted; graph-input operands are reported on kGraphInput.
std::vector<OperandRegion> input_regions(const ComputationNode& node,
                                         const LayerGraph& graph);

/// Edges via rectangle-overlap queries; words = overlap area, merged per
/// (producer, consumer). Sorted by (consumer, producer).
std::vector<DependencyEdge> generate_dependencies(
    const std::vector<ComputationNode>& nodes, const LayerGraph& graph);

/// Element-level reference for generate_dependencies. Refuses (throws
/// std::length_error) when the graph holds more than 10^6 tensor elements.
std::vector<DependencyEdge> brute_force_dependencies(
    const std::vector<ComputationNode>& nodes, const LayerGraph& graph);

inline constexpr std::uint64_t kBruteForceElementLimit = 1'000'000;

class NodeGraph {
 public:
  NodeGraph(LayerGraph graph, std::vector<ComputationNode> nodes,
            std::vector<DependencyEdge> edges);

  const LayerGraph& layers() const { return graph_; }
  const std::vector<ComputationNode>& nodes() const { return nodes_; }
  const ComputationNode& node(NodeId id) const { return nodes_.at(id); }
  const std::vector<DependencyEdge>& edges() const { return edges_; }
  std::size_t size() const { return nodes_.size(); }

  const std::vector<NodeId>& nodes_of(LayerId layer) const { return by_layer_.at(layer); }
  /// Edge indices into edges().
  const std::vector<std::size_t>& in_edges(NodeId id) const { return in_.at(id); }
  const std::vector<std::size_t>& out_edges(NodeId id) const { return out_.at(id); }

  /// Overlap index over the nodes producing `tensor` (a layer id).
  const RectIndex<NodeId>& producer_index(LayerId tensor) const { return index_.at(tensor); }

  /// Topological order of node ids; throws std::logic_error on a cycle.
  std::vector<NodeId> topological_order() const;

 private:
  LayerGraph graph_;
  std::vector<ComputationNode> nodes_;
  std::vector<DependencyEdge> edges_;
  std::vector<std::vector<NodeId>> by_layer_;
  std::vector<std::vector<std::size_t>> in_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<RectIndex<NodeId>> index_;
};

/// Splits every layer by `plan` and derives the dependency edges.
/// Throws std::invalid_argument if the plan misses a layer.
NodeGraph fine_grained_graph(const LayerGraph& graph, const SplitPlan& plan);

/// Same axis and tile for every layer (column axis falls back to rows for
/// non-matmul layers). tile == 0 means "whole extent".
SplitPlan uniform_split(const LayerGraph& graph, std::size_t tile,
                        SplitAxis axis = SplitAxis::Rows);

/// Text dump: one "node" line per node and one "edge" line per edge.
std::string dump_node_graph(const NodeGraph& ng);

}  // namespace attnsched
