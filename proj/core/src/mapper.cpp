#include "attnsched/mapper.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include "attnsched/errors.hpp"
#include "json_util.hpp"

namespace attnsched {

std::string_view to_string(LoopDim d) {
  switch (d) {
    case LoopDim::R: return "R";
    case LoopDim::S: return "S";
    case LoopDim::T: return "T";
  }
  return "?";
}

LoopDim loop_dim_from_string(std::string_view s) {
  if (s == "R") return LoopDim::R;
  if (s == "S") return LoopDim::S;
  if (s == "T") return LoopDim::T;
  throw std::invalid_argument("unknown loop dim '" + std::string(s) + "'");
}

LoopExtents node_extents(const ComputationNode& node, const LayerGraph& graph) {
  const Layer& layer = graph.layer(node.layer);
  const Rect& r = node.output.rect;
  if (is_matmul(layer.kind)) return {r.rows.length(), layer.inputs[0].shape.cols(), r.cols.length()};
  return {r.rows.length(), 1, r.cols.length()};
}

LoopExtents layer_extents(const Layer& layer) {
  if (is_matmul(layer.kind)) {
    return {layer.output.rows(), layer.inputs[0].shape.cols(), layer.output.cols()};
  }
  return {layer.output.rows(), 1, layer.output.cols()};
}

std::size_t Mapping::unroll_of(LoopDim d, std::size_t extent, const Core& core) const {
  auto axis = [&](std::size_t i, std::size_t size) {
    std::size_t u = unroll[i] == 0 ? size : unroll[i];
    return std::min(u, extent);
  };
  if (spatial_rows == d) return axis(0, core.array_rows);
  if (spatial_cols == d) return axis(1, core.array_cols);
  return 1;
}

std::size_t Mapping::steps(LoopDim d, std::size_t extent, const Core& core) const {
  const std::size_t u = unroll_of(d, extent, core);
  return (extent + u - 1) / u;
}

std::string describe(const Mapping& m) {
  auto sp = [](const std::optional<LoopDim>& d) {
    return d ? std::string(to_string(*d)) : std::string("-");
  };
  std::string out = "spatial=(" + sp(m.spatial_rows) + "," + sp(m.spatial_cols) + ") temporal=[";
  for (std::size_t i = 0; i < 3; ++i) {
    if (i) out += ",";
    out += to_string(m.temporal_order[i]);
  }
  return out + "]";
}

namespace {

double level_cost(const HardwareSpec& hw, const std::string& level) {
  if (const MemoryLevel* m = hw.level_named(level)) return m->access_cost;
  return 0.0;
}

OperandPath path_for(const HardwareSpec& hw, OperandRole role, bool is_weight) {
  OperandFeed f = hw.feed(role, is_weight);
  OperandPath p{f.bw, f.setup, f.level, level_cost(hw, f.level)};
  if (f.level.find("->") != std::string::npos) p.access_cost = level_cost(hw, hw.weight_level);
  return p;
}

constexpr std::array<LoopDim, 2> kRelevant[3] = {
    {LoopDim::R, LoopDim::S},  // I1
    {LoopDim::S, LoopDim::T},  // I2
    {LoopDim::R, LoopDim::T},  // O
};

void validate(const Mapping& m, const Core& core) {
  if (m.spatial_rows && m.spatial_rows == m.spatial_cols) {
    throw std::invalid_argument("mapping unrolls the same dim on both array axes");
  }
  if (m.unroll[0] > core.array_rows || m.unroll[1] > core.array_cols) {
    throw std::invalid_argument("mapping unroll exceeds the PE array of " + core.name);
  }
  auto order = m.temporal_order;
  std::sort(order.begin(), order.end());
  if (order != std::array<LoopDim, 3>{LoopDim::R, LoopDim::S, LoopDim::T}) {
    throw std::invalid_argument("temporal order must list R, S and T once each");
  }
}

std::uint64_t transfer(std::uint64_t words, const OperandPath& p) {
  if (words == 0) return 0;
  return p.setup + static_cast<std::uint64_t>(std::ceil(static_cast<double>(words) / p.bw - 1e-9));
}

}  // namespace

NodeFeeds default_feeds(const HardwareSpec& hw, const Layer& layer) {
  NodeFeeds f;
  f.i1 = path_for(hw, OperandRole::I1, false);
  f.i2 = path_for(hw, OperandRole::I2, layer.kind == LayerKind::MatMulWeights);
  f.o = path_for(hw, OperandRole::O, false);
  if (const MemoryLevel* rf = hw.register_level()) f.register_cost = rf->access_cost;
  return f;
}

NodeCost node_latency(const LoopExtents& node, const Core& core, const Mapping& mapping,
                      const NodeFeeds& feeds) {
  validate(mapping, core);
  NodeCost cost;
  std::uint64_t iterations = 1;
  for (LoopDim d : mapping.temporal_order) iterations *= mapping.steps(d, node[d], core);
  cost.compute_cycles = (iterations + core.macs_per_pe - 1) / core.macs_per_pe;

  const OperandPath* paths[3] = {&feeds.i1, &feeds.i2, &feeds.o};
  for (std::size_t x = 0; x < 3; ++x) {
    const auto& rel = kRelevant[x];
    auto relevant = [&](LoopDim d) { return d == rel[0] || d == rel[1]; };
    std::uint64_t size = std::uint64_t{node[rel[0]]} * node[rel[1]];
    // Irrelevant loops outside the innermost relevant (non-trivial) loop
    // force a refetch of the operand.
    int innermost = -1;
    for (int i = 0; i < 3; ++i) {
      LoopDim d = mapping.temporal_order[i];
      if (relevant(d) && mapping.steps(d, node[d], core) > 1) innermost = i;
    }
    std::uint64_t refetch = 1;
    for (int i = 0; i < innermost; ++i) {
      LoopDim d = mapping.temporal_order[i];
      if (!relevant(d)) refetch *= mapping.steps(d, node[d], core);
    }
    cost.operand_words[x] = size * refetch;
    const double e = static_cast<double>(cost.operand_words[x]) * paths[x]->access_cost;
    cost.energy += e;
    if (!paths[x]->level.empty()) cost.energy_by_level[paths[x]->level] += e;
  }
  const double reg = static_cast<double>(node.macs()) * 3.0 * feeds.register_cost;
  cost.energy += reg;
  cost.energy_by_level["L0"] += reg;

  std::uint64_t feed_time = 0;
  if (!feeds.i1.level.empty() && feeds.i1.level == feeds.i2.level) {
    OperandPath shared = feeds.i1;
    shared.bw = std::min(feeds.i1.bw, feeds.i2.bw);
    feed_time = transfer(cost.operand_words[0] + cost.operand_words[1], shared);
  } else {
    feed_time = std::max(transfer(cost.operand_words[0], feeds.i1),
                         transfer(cost.operand_words[1], feeds.i2));
  }
  cost.stall_cycles = feed_time > cost.compute_cycles ? feed_time - cost.compute_cycles : 0;
  return cost;
}

NodeCost node_cost(const ComputationNode& node, const LayerGraph& graph, const HardwareSpec& hw,
                   ResourceId resource, const Mapping& mapping) {
  const Layer& layer = graph.layer(node.layer);
  if (!hw.supports(resource, layer.kind)) {
    throw std::invalid_argument(hw.resource_name(resource) + " does not support " +
                                std::string(to_string(layer.kind)) + " (layer " + layer.name + ")");
  }
  NodeFeeds feeds = default_feeds(hw, layer);
  switch (layer.kind) {
    case LayerKind::Transpose:
      return {};
    case LayerKind::MatMulWeights:
    case LayerKind::MatMulFeatures:
      return node_latency(node_extents(node, graph), hw.cores.at(resource), mapping, feeds);
    case LayerKind::Softmax:
    case LayerKind::ElementwiseScale: {
      const std::uint64_t lanes =
          hw.is_simd(resource) ? hw.simd(resource).lanes : hw.cores.at(resource).peak_macs();
      const std::uint64_t words = node.output.rect.area();
      const std::uint64_t passes = layer.kind == LayerKind::Softmax ? 2 : 1;
      NodeCost c;
      c.compute_cycles = (passes * words + lanes - 1) / lanes;
      c.operand_words = {words, 0, words};
      const double in = static_cast<double>(words) * feeds.i1.access_cost;
      const double out = static_cast<double>(words) * feeds.o.access_cost;
      c.energy = in + out;
      if (!feeds.i1.level.empty()) c.energy_by_level[feeds.i1.level] += in;
      if (!feeds.o.level.empty()) c.energy_by_level[feeds.o.level] += out;
      return c;
    }
  }
  return {};
}

std::uint64_t band_footprint(const LoopExtents& layer, const Core& core, const Mapping& m) {
  const std::uint64_t out = std::uint64_t{layer.r} * layer.t;
  for (LoopDim d : m.temporal_order) {
    const std::size_t steps = m.steps(d, layer[d], core);
    if (steps <= 1) continue;
    if (d == LoopDim::S) return out;
    const std::uint64_t band = (layer[d] + steps - 1) / steps;
    return band * (d == LoopDim::R ? layer.t : layer.r);
  }
  return out;
}

std::vector<Mapping> enumerate_mappings() {
  using D = LoopDim;
  std::vector<std::pair<std::optional<D>, std::optional<D>>> spatial{{std::nullopt, std::nullopt}};
  for (D d : {D::R, D::S, D::T}) spatial.emplace_back(d, std::nullopt);
  for (D d : {D::R, D::S, D::T}) spatial.emplace_back(std::nullopt, d);
  for (D a : {D::R, D::S, D::T}) {
    for (D b : {D::R, D::S, D::T}) {
      if (a != b) spatial.emplace_back(a, b);
    }
  }
  std::vector<Mapping> out;
  for (const auto& [rows, cols] : spatial) {
    std::array<D, 3> order{D::R, D::S, D::T};
    do {
      Mapping m;
      m.spatial_rows = rows;
      m.spatial_cols = cols;
      m.temporal_order = order;
      out.push_back(m);
    } while (std::next_permutation(order.begin(), order.end()));
  }
  return out;
}

Mapping optimize_mapping_for_nodes(const Layer& layer,
                                   const std::vector<std::pair<LoopExtents, std::size_t>>& shapes,
                                   const Core& core, const NodeFeeds& feeds) {
  if (!core.supports.contains(layer.kind)) {
    throw std::invalid_argument(core.name + " does not support " +
                                std::string(to_string(layer.kind)) + " (layer " + layer.name + ")");
  }
  if (!is_matmul(layer.kind)) return Mapping{};
  const LoopExtents ext = layer_extents(layer);
  std::optional<Mapping> best;
  std::tuple<std::uint64_t, bool, std::uint64_t, double> best_key{};
  for (const Mapping& m : enumerate_mappings()) {
    std::uint64_t cycles = 0;
    double energy = 0.0;
    for (const auto& [shape, count] : shapes) {
      NodeCost c = node_latency(shape, core, m, feeds);
      cycles += c.total() * count;
      energy += c.energy * static_cast<double>(count);
    }
    // Ties go to row bands (what the memory model counts), then to the
    // smallest band.
    const SplitSpec split = split_for_mapping(layer, core, m);
    const bool not_rows = split.axis != SplitAxis::Rows || split.tile == layer.output.rows();
    auto key = std::make_tuple(cycles, not_rows, band_footprint(ext, core, m), energy);
    if (!best || key < best_key) {
      best = m;
      best_key = key;
    }
  }
  return *best;
}

Mapping optimize_mapping(const Layer& layer, const Core& core, const NodeFeeds& feeds) {
  if (!is_matmul(layer.kind) || !core.supports.contains(layer.kind)) {
    return optimize_mapping_for_nodes(layer, {}, core, feeds);
  }
  return optimize_mapping_for_nodes(layer, {{layer_extents(layer), 1}}, core, feeds);
}

SplitSpec split_for_mapping(const Layer& layer, const Core& core, const Mapping& m) {
  const LoopExtents ext = layer_extents(layer);
  for (LoopDim d : m.temporal_order) {
    const std::size_t steps = m.steps(d, ext[d], core);
    if (steps <= 1 || d == LoopDim::S) continue;
    if (d == LoopDim::T && !is_matmul(layer.kind)) continue;
    return SplitSpec{d == LoopDim::R ? SplitAxis::Rows : SplitAxis::Cols, m.unroll_of(d, ext[d], core)};
  }
  return SplitSpec{SplitAxis::Rows, layer.output.rows()};
}

MappingOverrides parse_mapping_overrides(std::string_view text) {
  nlohmann::json j = detail::parse_json(text);
  if (!j.is_object()) throw ConfigError("mapping overrides must be a JSON object", 1, "");
  MappingOverrides out;
  for (const auto& [name, entry] : j.items()) {
    const std::string path = "/" + name;
    const std::size_t line = detail::line_of_key(text, name);
    Mapping m;
    try {
      if (entry.contains("spatial")) {
        const auto& sp = entry.at("spatial");
        if (!sp.is_array() || sp.size() != 2) throw std::invalid_argument("spatial must be [rows, cols]");
        if (!sp[0].is_null()) m.spatial_rows = loop_dim_from_string(sp[0].get<std::string>());
        if (!sp[1].is_null()) m.spatial_cols = loop_dim_from_string(sp[1].get<std::string>());
      }
      if (entry.contains("temporal")) {
        const auto& t = entry.at("temporal");
        if (!t.is_array() || t.size() != 3) throw std::invalid_argument("temporal must list three dims");
        for (std::size_t i = 0; i < 3; ++i) m.temporal_order[i] = loop_dim_from_string(t[i].get<std::string>());
      }
      if (entry.contains("unroll")) {
        const auto& u = entry.at("unroll");
        if (!u.is_array() || u.size() != 2) throw std::invalid_argument("unroll must be [rows, cols]");
        m.unroll = {u[0].get<std::size_t>(), u[1].get<std::size_t>()};
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), line, path);
    }
    if (m.spatial_rows && m.spatial_rows == m.spatial_cols) {
      throw ConfigError("same dim on both array axes", line, path + "/spatial");
    }
    auto order = m.temporal_order;
    std::sort(order.begin(), order.end());
    if (order != std::array<LoopDim, 3>{LoopDim::R, LoopDim::S, LoopDim::T}) {
      throw ConfigError("temporal order must list R, S and T once each", line, path + "/temporal");
    }
    out.emplace(name, m);
  }
  return out;
}

CostModel::CostModel(const NodeGraph& ng, const HardwareSpec& hw, const MappingOverrides& overrides)
    : hw_(hw), resources_(hw.resource_count()) {
  const LayerGraph& g = ng.layers();
  mappings_.resize(g.size() * resources_);
  for (const Layer& layer : g.layers()) {
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> counts;
    for (NodeId id : ng.nodes_of(layer.id)) {
      LoopExtents e = node_extents(ng.node(id), g);
      ++counts[{e.r, e.s, e.t}];
    }
    std::vector<std::pair<LoopExtents, std::size_t>> shapes;
    for (const auto& [k, c] : counts) {
      shapes.push_back({LoopExtents{std::get<0>(k), std::get<1>(k), std::get<2>(k)}, c});
    }
    for (ResourceId r = 0; r < resources_; ++r) {
      if (!hw_.supports(r, layer.kind)) continue;
      Mapping m;
      if (!hw_.is_simd(r) && is_matmul(layer.kind)) {
        auto it = overrides.find(layer.name);
        m = it != overrides.end()
                ? it->second
                : optimize_mapping_for_nodes(layer, shapes, hw_.cores[r], default_feeds(hw_, layer));
      }
      mappings_[layer.id * resources_ + r] = m;
    }
  }
  costs_.resize(ng.size() * resources_);
  for (const auto& node : ng.nodes()) {
    for (ResourceId r = 0; r < resources_; ++r) {
      const auto& m = mappings_[node.layer * resources_ + r];
      if (m) costs_[node.id * resources_ + r] = node_cost(node, g, hw_, r, *m);
    }
  }
}

bool CostModel::supports(LayerId layer, ResourceId r) const {
  return r < resources_ && mappings_.at(layer * resources_ + r).has_value();
}

const Mapping& CostModel::mapping(LayerId layer, ResourceId r) const {
  if (!supports(layer, r)) {
    throw std::invalid_argument("resource " + std::to_string(r) + " cannot run layer " +
                                std::to_string(layer));
  }
  return *mappings_[layer * resources_ + r];
}

const NodeCost& CostModel::cost(NodeId node, ResourceId r) const {
  const auto& c = costs_.at(node * resources_ + r);
  if (!c) throw std::invalid_argument("no cost for node " + std::to_string(node) + " on resource " + std::to_string(r));
  return *c;
}

}  // namespace attnsched
