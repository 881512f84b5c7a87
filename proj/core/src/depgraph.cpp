#include "attnsched/depgraph.hpp"

#include <algorithm>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace attnsched {

std::vector<ComputationNode> split_layer(const Layer& layer, SplitAxis axis,
                                         std::size_t tile) {
  if (tile == 0) throw std::invalid_argument("split tile must be >= 1");
  if (axis == SplitAxis::Cols && !is_matmul(layer.kind)) {
    throw std::invalid_argument("layer " + layer.name +
                                ": only row-band splits are defined for " +
                                std::string(to_string(layer.kind)));
  }
  const std::size_t rows = layer.output.rows();
  const std::size_t cols = layer.output.cols();
  const std::size_t extent = axis == SplitAxis::Rows ? rows : cols;
  const std::size_t count = (extent + tile - 1) / tile;
  const std::uint64_t reduction = is_matmul(layer.kind) ? layer.inputs[0].shape.cols() : 0;

  std::vector<ComputationNode> nodes;
  nodes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t lo = i * tile;
    const std::size_t hi = (i + 1 == count) ? extent : lo + tile;
    ComputationNode n;
    n.id = i;
    n.layer = layer.id;
    n.index = i;
    n.kind = layer.kind;
    n.output.tensor = layer.id;
    n.output.rect = axis == SplitAxis::Rows ? Rect{{lo, hi}, {0, cols}}
                                            : Rect{{0, rows}, {lo, hi}};
    n.mac_count = std::uint64_t{n.output.rect.area()} * reduction;
    nodes.push_back(n);
  }
  return nodes;
}

std::vector<OperandRegion> input_regions(const ComputationNode& node,
                                         const LayerGraph& graph) {
  const Layer& layer = graph.layer(node.layer);
  const Rect& out = node.output.rect;
  std::vector<OperandRegion> regions;
  auto emit = [&](std::size_t slot, Rect r) {
    const Operand& op = layer.inputs[slot];
    if (!op.is_feature()) return;
    regions.push_back({slot, Region{op.tensor(), r}});
  };
  switch (layer.kind) {
    case LayerKind::MatMulWeights:
    case LayerKind::MatMulFeatures: {
      const std::size_t s = layer.inputs[0].shape.cols();
      emit(0, Rect{out.rows, {0, s}});
      emit(1, Rect{{0, s}, out.cols});
      break;
    }
    case LayerKind::Transpose:
      emit(0, Rect{out.cols, out.rows});
      break;
    case LayerKind::Softmax:
      emit(0, Rect{out.rows, {0, layer.inputs[0].shape.cols()}});
      break;
    case LayerKind::ElementwiseScale:
      emit(0, out);
      break;
  }
  return regions;
}

namespace {

std::vector<DependencyEdge> merge_edges(
    std::map<std::pair<NodeId, NodeId>, std::uint64_t>& acc) {
  std::vector<DependencyEdge> edges;
  edges.reserve(acc.size());
  for (const auto& [key, words] : acc) {
    edges.push_back({key.second, key.first, words});
  }
  return edges;
}

}  // namespace

std::vector<DependencyEdge> generate_dependencies(
    const std::vector<ComputationNode>& nodes, const LayerGraph& graph) {
  std::vector<std::vector<std::pair<Rect, NodeId>>> per_tensor(graph.size());
  for (const auto& n : nodes) per_tensor.at(n.layer).emplace_back(n.output.rect, n.id);
  std::vector<RectIndex<NodeId>> index;
  index.reserve(graph.size());
  for (auto& entries : per_tensor) index.emplace_back(std::move(entries));

  // Keyed by (consumer, producer) so the output is consumer-major.
  std::map<std::pair<NodeId, NodeId>, std::uint64_t> acc;
  for (const auto& c : nodes) {
    for (const auto& in : input_regions(c, graph)) {
      if (in.region.tensor == kGraphInput) continue;
      index.at(in.region.tensor)
          .visit_overlaps(in.region.rect, [&](const Rect& r, NodeId p) {
            acc[{c.id, p}] += r.overlap_area(in.region.rect);
          });
    }
  }
  return merge_edges(acc);
}

std::vector<DependencyEdge> brute_force_dependencies(
    const std::vector<ComputationNode>& nodes, const LayerGraph& graph) {
  std::uint64_t elements = graph.input_shape().words();
  for (const auto& l : graph.layers()) elements += l.output.words();
  if (elements > kBruteForceElementLimit) {
    throw std::length_error("brute-force dependency oracle refuses graphs above " +
                            std::to_string(kBruteForceElementLimit) + " elements");
  }

  // owner[t][r * cols + c] = node producing that element of layer t.
  constexpr NodeId kNone = static_cast<NodeId>(-1);
  std::vector<std::vector<NodeId>> owner(graph.size());
  for (const auto& l : graph.layers()) owner[l.id].assign(l.output.words(), kNone);
  for (const auto& n : nodes) {
    const std::size_t cols = graph.layer(n.layer).output.cols();
    for (std::size_t r = n.output.rect.rows.lo; r < n.output.rect.rows.hi; ++r) {
      for (std::size_t c = n.output.rect.cols.lo; c < n.output.rect.cols.hi; ++c) {
        owner[n.layer][r * cols + c] = n.id;
      }
    }
  }

  std::map<std::pair<NodeId, NodeId>, std::uint64_t> acc;
  std::vector<std::vector<char>> seen(graph.size());
  std::vector<std::pair<LayerId, std::size_t>> touched;

  auto need = [&](const Operand& op, std::size_t r, std::size_t c) {
    if (op.source != OperandSource::Layer) return;
    const std::size_t idx = r * op.shape.cols() + c;
    auto& mark = seen[op.layer];
    if (mark.empty()) mark.assign(op.shape.words(), 0);
    if (!mark[idx]) {
      mark[idx] = 1;
      touched.emplace_back(op.layer, idx);
    }
  };

  for (const auto& node : nodes) {
    const Layer& layer = graph.layer(node.layer);
    const Rect& out = node.output.rect;
    for (std::size_t i = out.rows.lo; i < out.rows.hi; ++i) {
      for (std::size_t j = out.cols.lo; j < out.cols.hi; ++j) {
        switch (layer.kind) {
          case LayerKind::MatMulWeights:
          case LayerKind::MatMulFeatures:
            for (std::size_t k = 0; k < layer.inputs[0].shape.cols(); ++k) {
              need(layer.inputs[0], i, k);
              need(layer.inputs[1], k, j);
            }
            break;
          case LayerKind::Transpose:
            need(layer.inputs[0], j, i);
            break;
          case LayerKind::Softmax:
            for (std::size_t k = 0; k < layer.inputs[0].shape.cols(); ++k) {
              need(layer.inputs[0], i, k);
            }
            break;
          case LayerKind::ElementwiseScale:
            need(layer.inputs[0], i, j);
            break;
        }
      }
    }
    for (auto [tensor, idx] : touched) {
      NodeId p = owner[tensor][idx];
      if (p != kNone) ++acc[{node.id, p}];
      seen[tensor][idx] = 0;
    }
    touched.clear();
  }
  return merge_edges(acc);
}

NodeGraph::NodeGraph(LayerGraph graph, std::vector<ComputationNode> nodes,
                     std::vector<DependencyEdge> edges)
    : graph_(std::move(graph)), nodes_(std::move(nodes)), edges_(std::move(edges)) {
  by_layer_.resize(graph_.size());
  in_.resize(nodes_.size());
  out_.resize(nodes_.size());
  std::vector<std::vector<std::pair<Rect, NodeId>>> per_tensor(graph_.size());
  for (const auto& n : nodes_) {
    by_layer_.at(n.layer).push_back(n.id);
    per_tensor[n.layer].emplace_back(n.output.rect, n.id);
  }
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    in_.at(edges_[e].consumer).push_back(e);
    out_.at(edges_[e].producer).push_back(e);
  }
  index_.reserve(graph_.size());
  for (auto& entries : per_tensor) index_.emplace_back(std::move(entries));
}

std::vector<NodeId> NodeGraph::topological_order() const {
  std::vector<std::size_t> indegree(nodes_.size());
  for (NodeId n = 0; n < nodes_.size(); ++n) indegree[n] = in_[n].size();
  std::queue<NodeId> ready;
  for (NodeId n = 0; n < nodes_.size(); ++n) {
    if (indegree[n] == 0) ready.push(n);
  }
  std::vector<NodeId> order;
  order.reserve(nodes_.size());
  while (!ready.empty()) {
    NodeId n = ready.front();
    ready.pop();
    order.push_back(n);
    for (std::size_t e : out_[n]) {
      if (--indegree[edges_[e].consumer] == 0) ready.push(edges_[e].consumer);
    }
  }
  if (order.size() != nodes_.size()) throw std::logic_error("node graph has a cycle");
  return order;
}

NodeGraph fine_grained_graph(const LayerGraph& graph, const SplitPlan& plan) {
  std::vector<ComputationNode> nodes;
  for (const auto& layer : graph.layers()) {
    auto it = plan.find(layer.id);
    if (it == plan.end()) {
      throw std::invalid_argument("split plan does not cover layer " + layer.name);
    }
    for (auto n : split_layer(layer, it->second.axis, it->second.tile)) {
      n.id = nodes.size();
      nodes.push_back(n);
    }
  }
  auto edges = generate_dependencies(nodes, graph);
  return NodeGraph(graph, std::move(nodes), std::move(edges));
}

SplitPlan uniform_split(const LayerGraph& graph, std::size_t tile, SplitAxis axis) {
  SplitPlan plan;
  for (const auto& l : graph.layers()) {
    SplitAxis a = is_matmul(l.kind) ? axis : SplitAxis::Rows;
    std::size_t extent = a == SplitAxis::Rows ? l.output.rows() : l.output.cols();
    plan[l.id] = SplitSpec{a, tile == 0 ? extent : tile};
  }
  return plan;
}

std::string dump_node_graph(const NodeGraph& ng) {
  std::ostringstream os;
  for (const auto& n : ng.nodes()) {
    const Rect& r = n.output.rect;
    os << "node " << n.id << " layer=" << ng.layers().layer(n.layer).name
       << " kind=" << to_string(n.kind) << " rows=[" << r.rows.lo << "," << r.rows.hi
       << ") cols=[" << r.cols.lo << "," << r.cols.hi << ") macs=" << n.mac_count
       << "\n";
  }
  for (const auto& e : ng.edges()) {
    os << "edge " << e.producer << " -> " << e.consumer << " words=" << e.words << "\n";
  }
  return os.str();
}

}  // namespace attnsched
