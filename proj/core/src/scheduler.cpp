#include "attnsched/scheduler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

namespace attnsched {

PriorityObjective SchedulePolicy::parse_priority(std::string_view text, double& lambda) {
  if (text == "latency") return PriorityObjective::Latency;
  if (text == "memory") return PriorityObjective::Memory;
  constexpr std::string_view prefix = "weighted:";
  if (text.substr(0, prefix.size()) == prefix) {
    const std::string rest(text.substr(prefix.size()));
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(rest, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != rest.size() || rest.empty() || !(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("weighted priority needs a lambda in [0,1], got '" + rest + "'");
    }
    lambda = v;
    return PriorityObjective::Weighted;
  }
  throw std::invalid_argument("unknown priority '" + std::string(text) +
                              "' (latency, memory, weighted:<lambda>)");
}

std::string describe(const SchedulePolicy& p) {
  std::string mode = p.mode == ScheduleMode::LayerByLayer     ? "layer_by_layer"
                     : p.mode == ScheduleMode::LayerFusedAuto ? "layer_fused_auto"
                                                              : "template(" + p.template_name + ")";
  std::ostringstream prio;
  switch (p.priority) {
    case PriorityObjective::Latency: prio << "latency"; break;
    case PriorityObjective::Memory: prio << "memory"; break;
    case PriorityObjective::Weighted: prio << "weighted:" << p.lambda; break;
  }
  return mode + "/" + prio.str();
}

std::size_t ScheduleTemplate::phase_of(LayerId layer) const {
  for (std::size_t p = 0; p < phases.size(); ++p) {
    if (std::find(phases[p].begin(), phases[p].end(), layer) != phases[p].end()) return p;
  }
  throw std::invalid_argument("template " + name + " does not place layer " + std::to_string(layer));
}

namespace {

using Role = AttentionRole;

struct TemplateShape {
  std::string name;
  std::vector<std::vector<Role>> phases;
  std::set<Role> fused;
};

const std::vector<TemplateShape>& template_shapes() {
  static const std::vector<TemplateShape> shapes{
      {"lbl_memory_optimal",
       {{Role::Query}, {Role::Key}, {Role::KeyT}, {Role::Value}, {Role::Scores}, {Role::Probs}, {Role::Output}},
       {}},
      {"lbl_memory_optimal_swapped",
       {{Role::Query}, {Role::Key}, {Role::KeyT}, {Role::Scores}, {Role::Value}, {Role::Probs}, {Role::Output}},
       {}},
      {"fuse_q_qkt",
       {{Role::Key}, {Role::KeyT}, {Role::Query, Role::Scores}, {Role::Value}, {Role::Probs}, {Role::Output}},
       {Role::Query}},
      {"fuse_qkt_qktv",
       {{Role::Key}, {Role::KeyT}, {Role::Value}, {Role::Query}, {Role::Scores, Role::Probs, Role::Output}},
       {Role::Scores, Role::Probs}},
      {"fuse_q_qkt_qktv",
       {{Role::Key}, {Role::KeyT}, {Role::Value}, {Role::Query, Role::Scores, Role::Probs, Role::Output}},
       {Role::Query, Role::Scores, Role::Probs}},
  };
  return shapes;
}

}  // namespace

const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& s : template_shapes()) out.push_back(s.name);
    return out;
  }();
  return names;
}

SplitPlan row_split(const LayerGraph& graph) {
  SplitPlan plan;
  for (const auto& l : graph.layers()) {
    plan[l.id] = SplitSpec{SplitAxis::Rows, l.kind == LayerKind::Transpose ? l.output.rows() : 1};
  }
  return plan;
}

ScheduleTemplate apply_template(std::string_view name, const LayerGraph& graph) {
  const TemplateShape* shape = nullptr;
  for (const auto& s : template_shapes()) {
    if (s.name == name) shape = &s;
  }
  if (shape == nullptr) {
    std::string known;
    for (const auto& n : template_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown template '" + std::string(name) + "' (known: " + known + ")");
  }
  std::map<std::pair<std::size_t, Role>, LayerId> by_role;
  for (const auto& l : graph.layers()) {
    if (l.role == Role::Other) {
      throw std::invalid_argument("template " + shape->name + " needs attention roles; layer " +
                                  l.name + " has none");
    }
    by_role[{l.head, l.role}] = l.id;
  }
  ScheduleTemplate t;
  t.name = shape->name;
  t.split = row_split(graph);
  for (const auto& roles : shape->phases) {
    std::vector<LayerId> phase;
    for (Role r : roles) {
      for (std::size_t h = 0; h < graph.head_count(); ++h) {
        auto it = by_role.find({h, r});
        if (it == by_role.end()) {
          throw std::invalid_argument("head " + std::to_string(h) + " lacks a " +
                                      std::string(to_string(r)) + " layer");
        }
        phase.push_back(it->second);
        if (shape->fused.contains(r)) t.fused.insert(it->second);
      }
    }
    t.phases.push_back(std::move(phase));
  }
  return t;
}

ScheduleTemplate apply_template(std::string_view name, std::size_t m, std::size_t n) {
  return apply_template(name, build_attention_head(m, n));
}

SplitPlan mapping_split(const LayerGraph& graph, const HardwareSpec& hw) {
  SplitPlan plan = row_split(graph);
  for (const auto& l : graph.layers()) {
    if (!is_matmul(l.kind)) continue;
    for (const auto& core : hw.cores) {
      if (!core.supports.contains(l.kind)) continue;
      plan[l.id] = split_for_mapping(l, core, optimize_mapping(l, core, default_feeds(hw, l)));
      break;
    }
  }
  return plan;
}

Allocation complete_allocation(const LayerGraph& graph, const HardwareSpec& hw, Allocation a) {
  if (a.size() != graph.size()) {
    throw std::invalid_argument("allocation covers " + std::to_string(a.size()) + " layers, graph has " +
                                std::to_string(graph.size()));
  }
  for (const auto& l : graph.layers()) {
    if (l.kind == LayerKind::Transpose && l.inputs[0].source == OperandSource::Layer) {
      a[l.id] = a[l.inputs[0].layer];
      // Views follow the producer; a SIMD producer leaves the view on its core.
      if (!hw.supports(a[l.id], l.kind)) a[l.id] = hw.home_core(a[l.id]);
    }
    if (!hw.supports(a[l.id], l.kind)) {
      throw std::invalid_argument("layer " + l.name + " allocated to " +
                                  (a[l.id] < hw.resource_count() ? hw.resource_name(a[l.id])
                                                                 : "resource " + std::to_string(a[l.id])) +
                                  ", which does not support " + std::string(to_string(l.kind)));
    }
  }
  return a;
}

Allocation default_allocation(const LayerGraph& graph, const HardwareSpec& hw) {
  Allocation a(graph.size(), 0);
  for (const auto& l : graph.layers()) {
    for (ResourceId r = 0; r < hw.resource_count(); ++r) {
      if (hw.supports(r, l.kind)) {
        a[l.id] = r;
        break;
      }
    }
  }
  return complete_allocation(graph, hw, a);
}

Allocation head_per_core_allocation(const LayerGraph& graph, const HardwareSpec& hw) {
  Allocation a = default_allocation(graph, hw);
  for (const auto& l : graph.layers()) {
    const std::size_t core = l.head % hw.cores.size();
    if (hw.supports(core, l.kind)) {
      a[l.id] = core;
      continue;
    }
    for (ResourceId r = hw.cores.size(); r < hw.resource_count(); ++r) {
      if (hw.home_core(r) == core && hw.supports(r, l.kind)) {
        a[l.id] = r;
        break;
      }
    }
  }
  return complete_allocation(graph, hw, a);
}

std::uint64_t MemoryTrace::peak() const {
  std::uint64_t p = 0;
  for (const auto& s : samples) p = std::max(p, s.words);
  return p;
}

std::uint64_t makespan(const std::vector<ScheduledNode>& sched) {
  std::uint64_t m = 0;
  for (const auto& s : sched) m = std::max(m, s.end);
  return m;
}

std::uint64_t peak_memory(const MemoryTrace& trace) { return trace.peak(); }

namespace {

constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

std::size_t slot_reading(const Layer& consumer, LayerId tensor) {
  for (std::size_t s = 0; s < consumer.inputs.size(); ++s) {
    if (consumer.inputs[s].is_feature() && consumer.inputs[s].tensor() == tensor) return s;
  }
  return 0;
}

/// Storage blocks and their consumers, looking through transposes.
struct Liveness {
  struct Use {
    NodeId node;
    std::size_t slot;
  };
  struct Block {
    NodeId producer = kNoNode;  // kNoNode: slice of the graph input
    std::uint64_t words = 0;
    std::vector<Use> uses;
  };

  std::vector<std::vector<Use>> consumers;  // per node
  std::vector<Block> blocks;
  std::vector<std::size_t> block_of;  // per node, or npos
  std::size_t input_blocks = 0;

  explicit Liveness(const NodeGraph& ng) {
    const LayerGraph& g = ng.layers();
    consumers.resize(ng.size());
    std::vector<char> expanded(ng.size(), 0);
    // Reverse topological order so transposes are expanded before producers.
    auto order = ng.topological_order();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const NodeId p = *it;
      std::vector<Use> uses;
      for (std::size_t e : ng.out_edges(p)) {
        const NodeId c = ng.edges()[e].consumer;
        if (ng.node(c).kind == LayerKind::Transpose) {
          uses.insert(uses.end(), consumers[c].begin(), consumers[c].end());
        } else {
          uses.push_back({c, slot_reading(g.layer(ng.node(c).layer), ng.node(p).layer)});
        }
      }
      std::sort(uses.begin(), uses.end(), [](const Use& a, const Use& b) {
        return std::tie(a.node, a.slot) < std::tie(b.node, b.slot);
      });
      uses.erase(std::unique(uses.begin(), uses.end(),
                             [](const Use& a, const Use& b) { return a.node == b.node && a.slot == b.slot; }),
                 uses.end());
      consumers[p] = std::move(uses);
    }

    // Graph input, cut at every consumer row boundary.
    std::vector<std::pair<Interval, Use>> input_uses;
    std::set<std::size_t> cuts{0, g.input_shape().rows()};
    for (const auto& n : ng.nodes()) {
      for (const auto& in : input_regions(n, g)) {
        if (in.region.tensor != kGraphInput) continue;
        input_uses.push_back({in.region.rect.rows, {n.id, in.slot}});
        cuts.insert(in.region.rect.rows.lo);
        cuts.insert(in.region.rect.rows.hi);
      }
    }
    for (auto it = cuts.begin(); std::next(it) != cuts.end(); ++it) {
      Interval rows{*it, *std::next(it)};
      Block b;
      b.words = std::uint64_t{rows.length()} * g.input_shape().cols();
      for (const auto& [r, use] : input_uses) {
        if (r.overlaps(rows)) b.uses.push_back(use);
      }
      blocks.push_back(std::move(b));
    }
    input_blocks = blocks.size();

    block_of.assign(ng.size(), std::string::npos);
    for (const auto& n : ng.nodes()) {
      if (n.kind == LayerKind::Transpose) continue;
      block_of[n.id] = blocks.size();
      blocks.push_back(Block{n.id, n.output.rect.area(), consumers[n.id]});
    }
  }
};

/// Release step: streamed operands leave with the sample, stationary
/// operands (slot 1) right after it.
int release_step(std::size_t slot) { return slot == 1 ? 2 : 1; }

}  // namespace

struct ScheduleContext::Impl {
  std::vector<NodeId> topo;
  Liveness live;
  std::vector<std::vector<std::size_t>> reads;  // distinct blocks per reading node
  std::vector<std::size_t> users;              // distinct readers per block

  explicit Impl(const NodeGraph& ng) : topo(ng.topological_order()), live(ng) {
    reads.resize(ng.size());
    users.resize(live.blocks.size());
    for (std::size_t b = 0; b < live.blocks.size(); ++b) {
      std::set<NodeId> readers;
      for (const auto& u : live.blocks[b].uses) readers.insert(u.node);
      users[b] = readers.size();
      for (NodeId r : readers) reads[r].push_back(b);
    }
  }
};

ScheduleContext::ScheduleContext(const NodeGraph& ng) : impl_(std::make_unique<Impl>(ng)) {}
ScheduleContext::~ScheduleContext() = default;

namespace {

using EventMap = std::map<std::uint64_t, std::pair<std::int64_t, std::int64_t>>;

MemoryTrace to_trace(const EventMap& events, std::int64_t initial) {
  MemoryTrace trace;
  std::int64_t value = initial;
  bool first = true;
  for (const auto& [t, delta] : events) {
    value += delta.first;
    if (delta.first != 0 || delta.second == 0 || first) {
      trace.samples.push_back({t, static_cast<std::uint64_t>(value)});
    }
    if (delta.second != 0) {
      value += delta.second;
      trace.samples.push_back({t, static_cast<std::uint64_t>(value)});
    }
    first = false;
  }
  return trace;
}

/// Global trace and, when `per_core` is set, one trace per core, from one
/// pass over the storage blocks.
MemoryTrace build_traces(const NodeGraph& ng, const ScheduleContext::Impl& ctx,
                         const std::vector<ScheduledNode>& sched, const HardwareSpec& hw,
                         const std::set<LayerId>& realized_fused, std::vector<MemoryTrace>* per_core) {
  const Liveness& live = ctx.live;
  const std::size_t n = ng.size();
  if (sched.size() != n) throw std::invalid_argument("schedule does not cover the node graph");

  // A consumer whose own output stays in registers holds its inputs until
  // the fused chain writes a counted tensor.
  std::vector<std::uint64_t> eff_end(n, 0);
  for (auto it = ctx.topo.rbegin(); it != ctx.topo.rend(); ++it) {
    const NodeId c = *it;
    eff_end[c] = sched[c].end;
    if (realized_fused.contains(ng.node(c).layer)) {
      for (const auto& u : live.consumers[c]) eff_end[c] = std::max(eff_end[c], eff_end[u.node]);
    }
  }

  const std::size_t cores = per_core ? hw.cores.size() : 0;
  EventMap global;
  std::vector<EventMap> local(cores);
  std::int64_t global_initial = 0;
  std::vector<std::int64_t> local_initial(cores, 0);
  global[0];
  for (auto& m : local) m[0];

  auto add = [&](EventMap& events, std::int64_t& initial, std::uint64_t words,
                 std::optional<std::uint64_t> alloc_at, std::optional<std::pair<std::uint64_t, int>> release) {
    const auto w = static_cast<std::int64_t>(words);
    if (alloc_at) {
      events[*alloc_at].first += w;
    } else {
      initial += w;
    }
    if (!release) return;  // graph output: stays alive
    auto& ev = events[release->first];
    (release->second == 1 ? ev.first : ev.second) -= w;
  };
  auto release_of = [&](const std::vector<Liveness::Use>& uses) -> std::optional<std::pair<std::uint64_t, int>> {
    if (uses.empty()) return std::nullopt;
    std::pair<std::uint64_t, int> r{0, 1};
    for (const auto& u : uses) r = std::max(r, std::make_pair(eff_end[u.node], release_step(u.slot)));
    return r;
  };

  for (std::size_t i = 0; i < live.input_blocks; ++i) {
    const auto& b = live.blocks[i];
    add(global, global_initial, b.words, std::nullopt, release_of(b.uses));
    for (std::size_t c = 0; c < cores; ++c) {
      std::vector<Liveness::Use> mine;
      for (const auto& u : b.uses) {
        if (hw.home_core(sched[u.node].resource) == c) mine.push_back(u);
      }
      if (!mine.empty()) add(local[c], local_initial[c], b.words, std::nullopt, release_of(mine));
    }
  }
  for (std::size_t i = live.input_blocks; i < live.blocks.size(); ++i) {
    const auto& b = live.blocks[i];
    if (realized_fused.contains(ng.node(b.producer).layer)) continue;
    const auto rel = release_of(b.uses);
    add(global, global_initial, b.words, sched[b.producer].end, rel);
    if (cores > 0) {
      const std::size_t c = hw.home_core(sched[b.producer].resource);
      add(local[c], local_initial[c], b.words, sched[b.producer].end, rel);
    }
  }

  if (per_core) {
    per_core->clear();
    for (std::size_t c = 0; c < cores; ++c) per_core->push_back(to_trace(local[c], local_initial[c]));
  }
  return to_trace(global, global_initial);
}

}  // namespace

MemoryTrace memory_trace(const NodeGraph& ng, const std::vector<ScheduledNode>& sched,
                         const HardwareSpec& hw, const std::set<LayerId>& realized_fused,
                         std::optional<std::size_t> core) {
  const ScheduleContext ctx(ng);
  if (!core) return build_traces(ng, ctx.impl(), sched, hw, realized_fused, nullptr);
  if (*core >= hw.cores.size()) throw std::out_of_range("no core " + std::to_string(*core));
  std::vector<MemoryTrace> per_core;
  build_traces(ng, ctx.impl(), sched, hw, realized_fused, &per_core);
  return per_core[*core];
}

ScheduleResult schedule(const NodeGraph& ng, const CostModel& costs, const Allocation& alloc_in,
                        const SchedulePolicy& policy, const ScheduleTemplate* tmpl,
                        const ScheduleContext* ctx_in) {
  const LayerGraph& g = ng.layers();
  const HardwareSpec& hw = costs.hardware();
  if (policy.mode == ScheduleMode::Template && tmpl == nullptr) {
    throw std::invalid_argument("template mode needs a schedule template");
  }
  if (policy.lambda < 0.0 || policy.lambda > 1.0) throw std::invalid_argument("lambda must lie in [0,1]");
  const Allocation alloc = complete_allocation(g, hw, alloc_in);
  std::unique_ptr<ScheduleContext> own;
  if (ctx_in == nullptr) own = std::make_unique<ScheduleContext>(ng);
  const ScheduleContext::Impl& ctx = (ctx_in ? ctx_in : own.get())->impl();
  const std::vector<NodeId>& topo = ctx.topo;
  const std::size_t n = ng.size();
  const std::size_t layers = g.size();

  // Phase rank and depth inside the phase for every layer.
  std::vector<std::size_t> phase(layers, 0), depth(layers, 0);
  if (policy.mode == ScheduleMode::Template) {
    for (std::size_t p = 0; p < tmpl->phases.size(); ++p) {
      std::map<std::size_t, std::size_t> seen_per_head;
      for (LayerId l : tmpl->phases[p]) {
        phase.at(l) = p;
        depth.at(l) = seen_per_head[g.layer(l).head]++;
      }
    }
    for (const auto& l : g.layers()) (void)tmpl->phase_of(l.id);
  } else if (policy.mode == ScheduleMode::LayerByLayer) {
    std::vector<std::size_t> indeg(layers, 0);
    std::vector<std::vector<LayerId>> succ(layers);
    for (const auto& l : g.layers()) {
      for (auto [p, slot] : l.predecessors()) {
        ++indeg[l.id];
        succ[p].push_back(l.id);
      }
    }
    std::priority_queue<LayerId, std::vector<LayerId>, std::greater<>> q;
    for (LayerId l = 0; l < layers; ++l) {
      if (indeg[l] == 0) q.push(l);
    }
    std::size_t rank = 0;
    while (!q.empty()) {
      LayerId l = q.top();
      q.pop();
      phase[l] = rank++;
      for (LayerId s : succ[l]) {
        if (--indeg[s] == 0) q.push(s);
      }
    }
    if (rank != layers) throw std::logic_error("layer graph has a cycle");
  }

  std::vector<std::vector<LayerId>> waits_on(layers);  // layer -> barrier layers
  std::vector<std::vector<LayerId>> unblocks(layers);  // barrier layer -> waiting layers
  if (policy.mode != ScheduleMode::LayerFusedAuto) {
    for (const auto& l : g.layers()) {
      std::set<LayerId> preds;
      for (auto [p, slot] : l.predecessors()) {
        if (phase[p] < phase[l.id]) preds.insert(p);
      }
      for (LayerId p : preds) {
        waits_on[l.id].push_back(p);
        unblocks[p].push_back(l.id);
      }
    }
  }

  const Liveness& live = ctx.live;

  ScheduleResult result;
  if (policy.mode == ScheduleMode::Template) {
    for (LayerId l : tmpl->fused) {
      bool ok = true;
      for (NodeId p : ng.nodes_of(l)) {
        for (const auto& u : live.consumers[p]) {
          const LayerId cl = ng.node(u.node).layer;
          ok = ok && hw.connected(alloc[l], alloc[cl]) && phase[cl] == phase[l];
        }
      }
      if (ok) result.realized_fused.insert(l);
    }
  }

  auto node_cost = [&](NodeId id) -> const NodeCost& { return costs.cost(id, alloc[ng.node(id).layer]); };

  // Static priority terms.
  std::vector<double> bottom(n, 0.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    double best = 0.0;
    for (std::size_t e : ng.out_edges(*it)) best = std::max(best, bottom[ng.edges()[e].consumer]);
    bottom[*it] = best + static_cast<double>(node_cost(*it).total());
  }
  const double max_bottom = std::max(1.0, *std::max_element(bottom.begin(), bottom.end()));
  std::vector<std::uint64_t> out_words(n, 0);
  for (const auto& node : ng.nodes()) {
    if (node.kind != LayerKind::Transpose && !result.realized_fused.contains(node.layer)) {
      out_words[node.id] = node.output.rect.area();
    }
  }
  double max_words = 1.0;
  for (const auto& b : live.blocks) max_words = std::max(max_words, static_cast<double>(b.words));

  // Readers left per block, for the memory objective.
  const auto& reads = ctx.reads;
  std::vector<std::size_t> remaining = ctx.users;

  using Key = std::tuple<std::size_t, std::size_t, std::int64_t, double, std::size_t, std::size_t>;
  auto key_of = [&](NodeId id) -> Key {
    const auto& node = ng.node(id);
    if (policy.mode == ScheduleMode::Template) {
      return {g.layer(node.layer).head, phase[node.layer], -static_cast<std::int64_t>(depth[node.layer]), 0.0,
              node.index, node.layer};
    }
    double freed = 0.0;
    if (policy.priority != PriorityObjective::Latency) {
      for (std::size_t b : reads[id]) {
        if (remaining[b] == 1) freed += static_cast<double>(live.blocks[b].words);
      }
    }
    const double mem = static_cast<double>(out_words[id]) - freed;
    double v = 0.0;
    switch (policy.priority) {
      case PriorityObjective::Latency: v = -bottom[id]; break;
      case PriorityObjective::Memory: v = mem; break;
      case PriorityObjective::Weighted:
        v = policy.lambda * (-bottom[id] / max_bottom) + (1.0 - policy.lambda) * (mem / max_words);
        break;
    }
    return {0, 0, 0, v, node.layer, node.index};
  };

  // Event loop.
  std::vector<std::size_t> pending(n, 0);
  std::vector<std::uint64_t> ready_at(n, 0);
  for (const auto& node : ng.nodes()) {
    pending[node.id] = ng.in_edges(node.id).size() + waits_on[node.layer].size();
  }
  std::vector<std::size_t> layer_done(layers, 0);
  std::vector<std::uint64_t> layer_end(layers, 0);
  std::vector<std::uint64_t> busy_until(hw.resource_count(), 0);
  std::vector<std::vector<NodeId>> released(hw.resource_count());
  using Event = std::pair<std::uint64_t, NodeId>;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> running;
  result.nodes.resize(n);
  std::uint64_t t = 0;

  auto start = [&](NodeId id, std::uint64_t at) {
    const ResourceId r = alloc[ng.node(id).layer];
    result.nodes[id] = {id, r, at, at + node_cost(id).total()};
    running.push({result.nodes[id].end, id});
  };
  auto release = [&](NodeId id) {
    const ResourceId r = alloc[ng.node(id).layer];
    if (node_cost(id).total() == 0) {
      start(id, std::max(t, ready_at[id]));
    } else {
      released[r].push_back(id);
    }
  };
  auto satisfy = [&](NodeId id) {
    if (--pending[id] == 0) release(id);
  };

  for (NodeId id = 0; id < n; ++id) {
    if (pending[id] == 0) release(id);
  }
  std::size_t completed = 0;
  while (completed < n) {
    while (!running.empty() && running.top().first <= t) {
      const NodeId p = running.top().second;
      running.pop();
      ++completed;
      const auto& sp = result.nodes[p];
      const LayerId pl = ng.node(p).layer;
      for (std::size_t e : ng.out_edges(p)) {
        const auto& edge = ng.edges()[e];
        const ResourceId rc = alloc[ng.node(edge.consumer).layer];
        ready_at[edge.consumer] =
            std::max(ready_at[edge.consumer], sp.end + hw.transfer_cycles(sp.resource, rc, edge.words));
        satisfy(edge.consumer);
      }
      layer_end[pl] = std::max(layer_end[pl], sp.end);
      if (++layer_done[pl] == ng.nodes_of(pl).size()) {
        for (LayerId w : unblocks[pl]) {
          for (NodeId c : ng.nodes_of(w)) {
            ready_at[c] = std::max(ready_at[c], layer_end[pl]);
            satisfy(c);
          }
        }
      }
    }
    for (ResourceId r = 0; r < hw.resource_count(); ++r) {
      if (busy_until[r] > t) continue;
      auto& list = released[r];
      std::size_t best = list.size();
      Key best_key{};
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (ready_at[list[i]] > t) continue;
        Key k = key_of(list[i]);
        if (best == list.size() || k < best_key) {
          best = i;
          best_key = k;
        }
      }
      if (best == list.size()) continue;
      const NodeId id = list[best];
      list[best] = list.back();
      list.pop_back();
      for (std::size_t b : reads[id]) --remaining[b];
      start(id, t);
      busy_until[r] = result.nodes[id].end;
    }
    if (completed == n) break;
    std::uint64_t next = std::numeric_limits<std::uint64_t>::max();
    if (!running.empty()) next = running.top().first;
    for (ResourceId r = 0; r < hw.resource_count(); ++r) {
      for (NodeId id : released[r]) {
        const std::uint64_t when = std::max(ready_at[id], busy_until[r]);
        if (when > t) next = std::min(next, when);
      }
    }
    if (next == std::numeric_limits<std::uint64_t>::max()) {
      throw std::logic_error("scheduler deadlock: " + std::to_string(n - completed) + " nodes never became ready");
    }
    t = next;
  }

  result.makespan = makespan(result.nodes);
  result.trace = build_traces(ng, ctx, result.nodes, hw, result.realized_fused, &result.core_traces);
  result.peak = result.trace.peak();

  // Energy; fused tensors are written to and read from registers.
  for (const auto& node : ng.nodes()) result.energy += node_cost(node.id).energy;
  for (const auto& node : ng.nodes()) {
    const Layer& layer = g.layer(node.layer);
    const NodeFeeds feeds = default_feeds(hw, layer);
    const NodeCost& c = node_cost(node.id);
    if (result.realized_fused.contains(node.layer)) {
      result.energy -= static_cast<double>(c.operand_words[2]) * (feeds.o.access_cost - feeds.register_cost);
    }
    for (std::size_t s = 0; s < layer.inputs.size() && s < 2; ++s) {
      const Operand& op = layer.inputs[s];
      if (op.source != OperandSource::Layer || !result.realized_fused.contains(op.layer)) continue;
      const double level = s == 0 ? feeds.i1.access_cost : feeds.i2.access_cost;
      result.energy -= static_cast<double>(c.operand_words[s]) * (level - feeds.register_cost);
    }
  }
  return result;
}

Run run_schedule(const LayerGraph& graph, const HardwareSpec& hw, const SchedulePolicy& policy,
                 std::optional<Allocation> alloc, const MappingOverrides& overrides) {
  std::optional<ScheduleTemplate> tmpl;
  SplitPlan split;
  if (policy.mode == ScheduleMode::Template) {
    tmpl = apply_template(policy.template_name, graph);
    split = tmpl->split;
  } else {
    split = mapping_split(graph, hw);
  }
  NodeGraph ng = fine_grained_graph(graph, split);
  CostModel costs(ng, hw, overrides);
  Allocation a = complete_allocation(graph, hw, alloc ? *alloc : default_allocation(graph, hw));
  ScheduleResult r = schedule(ng, costs, a, policy, tmpl ? &*tmpl : nullptr);
  return Run{std::move(ng), std::move(costs), std::move(a), policy, std::move(tmpl), std::move(r)};
}

std::string schedule_json(const NodeGraph& ng, const HardwareSpec& hw, const ScheduleResult& r) {
  nlohmann::ordered_json j;
  j["platform"] = hw.name;
  j["makespan"] = r.makespan;
  j["peak_words"] = r.peak;
  j["energy"] = r.energy;
  nlohmann::ordered_json fused = nlohmann::ordered_json::array();
  for (LayerId l : r.realized_fused) fused.push_back(ng.layers().layer(l).name);
  j["fused_layers"] = fused;
  nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
  for (const auto& s : r.nodes) {
    const auto& node = ng.node(s.node);
    nlohmann::ordered_json nj;
    nj["id"] = s.node;
    nj["layer"] = ng.layers().layer(node.layer).name;
    nj["index"] = node.index;
    nj["resource"] = hw.resource_name(s.resource);
    nj["start"] = s.start;
    nj["end"] = s.end;
    nodes.push_back(nj);
  }
  j["nodes"] = nodes;
  return j.dump(2) + "\n";
}

std::string memtrace_csv(const MemoryTrace& trace) {
  std::ostringstream os;
  os << "time,active_words\n";
  for (const auto& s : trace.samples) os << s.time << "," << s.words << "\n";
  return os.str();
}

namespace {

const char* role_color(AttentionRole r) {
  switch (r) {
    case AttentionRole::Query: return "#4e79a7";
    case AttentionRole::Key: return "#f28e2b";
    case AttentionRole::Value: return "#e15759";
    case AttentionRole::KeyT: return "#76b7b2";
    case AttentionRole::Scores: return "#59a14f";
    case AttentionRole::Probs: return "#edc948";
    case AttentionRole::Output: return "#b07aa1";
    case AttentionRole::Other: return "#9c755f";
  }
  return "#000000";
}

char role_glyph(AttentionRole r) {
  switch (r) {
    case AttentionRole::Query: return 'Q';
    case AttentionRole::Key: return 'K';
    case AttentionRole::Value: return 'V';
    case AttentionRole::KeyT: return 'T';
    case AttentionRole::Scores: return 'S';
    case AttentionRole::Probs: return 'P';
    case AttentionRole::Output: return 'O';
    case AttentionRole::Other: return '#';
  }
  return '?';
}

}  // namespace

std::string gantt_svg(const NodeGraph& ng, const HardwareSpec& hw, const ScheduleResult& r) {
  constexpr double kLeft = 90, kWidth = 900, kRow = 26, kTop = 30;
  const std::size_t rows = hw.resource_count();
  const double span = static_cast<double>(std::max<std::uint64_t>(r.makespan, 1));
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kLeft + kWidth + 20 << "\" height=\""
     << kTop + kRow * static_cast<double>(rows) + 40 << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<text x=\"" << kLeft << "\" y=\"18\">" << hw.name << " makespan=" << r.makespan
     << " peak_words=" << r.peak << "</text>\n";
  for (std::size_t i = 0; i < rows; ++i) {
    const double y = kTop + kRow * static_cast<double>(i);
    os << "<text x=\"4\" y=\"" << y + 16 << "\">" << hw.resource_name(i) << "</text>\n";
    os << "<rect x=\"" << kLeft << "\" y=\"" << y << "\" width=\"" << kWidth << "\" height=\"" << kRow - 4
       << "\" fill=\"#f4f4f4\"/>\n";
  }
  for (const auto& s : r.nodes) {
    if (s.end == s.start) continue;
    const Layer& l = ng.layers().layer(ng.node(s.node).layer);
    const double x = kLeft + kWidth * static_cast<double>(s.start) / span;
    const double w = std::max(0.5, kWidth * static_cast<double>(s.end - s.start) / span);
    const double y = kTop + kRow * static_cast<double>(s.resource);
    os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << kRow - 4
       << "\" fill=\"" << role_color(l.role) << "\"><title>" << l.name << "[" << ng.node(s.node).index
       << "] " << s.start << "-" << s.end << "</title></rect>\n";
  }
  const double axis_y = kTop + kRow * static_cast<double>(rows) + 14;
  os << "<text x=\"" << kLeft << "\" y=\"" << axis_y << "\">0</text>\n";
  os << "<text x=\"" << kLeft + kWidth - 60 << "\" y=\"" << axis_y << "\">" << r.makespan << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string gantt_ascii(const NodeGraph& ng, const HardwareSpec& hw, const ScheduleResult& r,
                        std::size_t width) {
  width = std::max<std::size_t>(width, 1);
  const std::uint64_t span = std::max<std::uint64_t>(r.makespan, 1);
  std::vector<std::string> lines(hw.resource_count(), std::string(width, '.'));
  std::vector<std::vector<std::uint64_t>> cover(hw.resource_count(), std::vector<std::uint64_t>(width, 0));
  for (const auto& s : r.nodes) {
    if (s.end == s.start) continue;
    const char glyph = role_glyph(ng.layers().layer(ng.node(s.node).layer).role);
    // Each cell shows the node covering most of its time window.
    for (std::size_t c = s.start * width / span; c < width && c * span < s.end * width; ++c) {
      const std::uint64_t lo = std::max<std::uint64_t>(s.start * width, c * span);
      const std::uint64_t hi = std::min<std::uint64_t>(s.end * width, (c + 1) * span);
      if (hi > lo && hi - lo > cover[s.resource][c]) {
        cover[s.resource][c] = hi - lo;
        lines[s.resource][c] = glyph;
      }
    }
  }
  std::size_t label = 0;
  for (std::size_t i = 0; i < hw.resource_count(); ++i) label = std::max(label, hw.resource_name(i).size());
  std::ostringstream os;
  os << "makespan=" << r.makespan << " peak_words=" << r.peak << "\n";
  for (std::size_t i = 0; i < hw.resource_count(); ++i) {
    std::string name = hw.resource_name(i);
    os << name << std::string(label - name.size(), ' ') << " |" << lines[i] << "|\n";
  }
  return os.str();
}

}  // namespace attnsched
