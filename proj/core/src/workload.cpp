#include "attnsched/workload.hpp"

#include <charconv>
#include <fstream>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "json_util.hpp"

namespace attnsched {

TensorShape::TensorShape(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) {
    throw std::invalid_argument("tensor extents must be >= 1");
  }
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::MatMulWeights: return "matmul_weights";
    case LayerKind::MatMulFeatures: return "matmul_features";
    case LayerKind::Transpose: return "transpose";
    case LayerKind::Softmax: return "softmax";
    case LayerKind::ElementwiseScale: return "elementwise_scale";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : kAllLayerKinds) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown layer kind '" + std::string(name) + "'");
}

bool is_matmul(LayerKind kind) {
  return kind == LayerKind::MatMulWeights || kind == LayerKind::MatMulFeatures;
}

std::string_view to_string(AttentionRole role) {
  switch (role) {
    case AttentionRole::Query: return "Q";
    case AttentionRole::Key: return "K";
    case AttentionRole::Value: return "V";
    case AttentionRole::KeyT: return "KT";
    case AttentionRole::Scores: return "QKT";
    case AttentionRole::Probs: return "softmax";
    case AttentionRole::Output: return "QKTV";
    case AttentionRole::Other: return "other";
  }
  return "?";
}

AttentionRole attention_role_from_string(std::string_view name) {
  for (auto r : {AttentionRole::Query, AttentionRole::Key, AttentionRole::Value,
                 AttentionRole::KeyT, AttentionRole::Scores, AttentionRole::Probs,
                 AttentionRole::Output, AttentionRole::Other}) {
    if (to_string(r) == name) return r;
  }
  throw std::invalid_argument("unknown attention role '" + std::string(name) + "'");
}

std::vector<std::pair<LayerId, std::size_t>> Layer::predecessors() const {
  std::vector<std::pair<LayerId, std::size_t>> out;
  for (std::size_t slot = 0; slot < inputs.size(); ++slot) {
    if (inputs[slot].source == OperandSource::Layer) {
      out.emplace_back(inputs[slot].layer, slot);
    }
  }
  return out;
}

std::uint64_t Layer::mac_count() const {
  if (!is_matmul(kind) || inputs.size() != 2) return 0;
  return std::uint64_t{inputs[0].shape.rows()} * inputs[0].shape.cols() *
         inputs[1].shape.cols();
}

LayerGraph::LayerGraph(TensorShape input_shape, std::size_t head_count)
    : input_shape_(input_shape), head_count_(head_count) {
  if (head_count == 0) throw std::invalid_argument("head count must be >= 1");
}

LayerId LayerGraph::add(Layer layer) {
  layer.id = layers_.size();
  layers_.push_back(std::move(layer));
  return layers_.back().id;
}

std::vector<std::pair<LayerId, std::size_t>> LayerGraph::consumers(
    LayerId tensor) const {
  std::vector<std::pair<LayerId, std::size_t>> out;
  for (const auto& l : layers_) {
    for (std::size_t slot = 0; slot < l.inputs.size(); ++slot) {
      const Operand& op = l.inputs[slot];
      if (op.is_feature() && op.tensor() == tensor) out.emplace_back(l.id, slot);
    }
  }
  return out;
}

std::uint64_t LayerGraph::mac_count() const {
  std::uint64_t total = 0;
  for (const auto& l : layers_) total += l.mac_count();
  return total;
}

std::uint64_t LayerGraph::produced_feature_words() const {
  std::uint64_t total = 0;
  for (const auto& l : layers_) {
    if (l.kind != LayerKind::Transpose) total += l.output.words();
  }
  return total;
}

namespace {

void append_head(LayerGraph& g, std::size_t m, std::size_t n, std::size_t head) {
  const TensorShape in{m, n};
  const TensorShape w{n, n};
  const std::string prefix = "h" + std::to_string(head) + ".";
  auto weight_mm = [&](AttentionRole role) {
    Layer l;
    l.name = prefix + std::string(to_string(role));
    l.kind = LayerKind::MatMulWeights;
    l.inputs = {Operand{OperandSource::GraphInput, kGraphInput, in},
                Operand{OperandSource::Weight, kGraphInput, w}};
    l.output = TensorShape{m, n};
    l.head = head;
    l.role = role;
    return g.add(std::move(l));
  };
  const LayerId q = weight_mm(AttentionRole::Query);
  const LayerId k = weight_mm(AttentionRole::Key);
  const LayerId v = weight_mm(AttentionRole::Value);

  Layer kt;
  kt.name = prefix + "KT";
  kt.kind = LayerKind::Transpose;
  kt.inputs = {Operand{OperandSource::Layer, k, TensorShape{m, n}}};
  kt.output = TensorShape{n, m};
  kt.head = head;
  kt.role = AttentionRole::KeyT;
  const LayerId kt_id = g.add(std::move(kt));

  Layer s;
  s.name = prefix + "QKT";
  s.kind = LayerKind::MatMulFeatures;
  s.inputs = {Operand{OperandSource::Layer, q, TensorShape{m, n}},
              Operand{OperandSource::Layer, kt_id, TensorShape{n, m}}};
  s.output = TensorShape{m, m};
  s.head = head;
  s.role = AttentionRole::Scores;
  const LayerId s_id = g.add(std::move(s));

  Layer p;
  p.name = prefix + "softmax";
  p.kind = LayerKind::Softmax;
  p.inputs = {Operand{OperandSource::Layer, s_id, TensorShape{m, m}}};
  p.output = TensorShape{m, m};
  p.head = head;
  p.role = AttentionRole::Probs;
  const LayerId p_id = g.add(std::move(p));

  Layer o;
  o.name = prefix + "QKTV";
  o.kind = LayerKind::MatMulFeatures;
  o.inputs = {Operand{OperandSource::Layer, p_id, TensorShape{m, m}},
              Operand{OperandSource::Layer, v, TensorShape{m, n}}};
  o.output = TensorShape{m, n};
  o.head = head;
  o.role = AttentionRole::Output;
  g.add(std::move(o));
}

}  // namespace

LayerGraph build_attention_head(std::size_t m, std::size_t n) {
  return build_mhsa(m, n, 1);
}

LayerGraph build_mhsa(std::size_t m, std::size_t n, std::size_t heads) {
  LayerGraph g{TensorShape{m, n}, heads};
  for (std::size_t h = 0; h < heads; ++h) append_head(g, m, n, h);
  return g;
}

ShapeReport validate_graph(const LayerGraph& graph) {
  ShapeReport report;
  const auto& layers = graph.layers();
  auto complain = [&](const Layer& l, const std::string& what) {
    report.violations.push_back("layer " + std::to_string(l.id) + " (" + l.name +
                                "): " + what);
  };
  auto shape_str = [](const TensorShape& s) {
    return std::to_string(s.rows()) + "x" + std::to_string(s.cols());
  };

  for (const auto& l : layers) {
    for (std::size_t slot = 0; slot < l.inputs.size(); ++slot) {
      const Operand& op = l.inputs[slot];
      const std::string where = "input slot " + std::to_string(slot);
      if (op.source == OperandSource::Layer) {
        if (op.layer >= layers.size()) {
          complain(l, where + " references missing layer " + std::to_string(op.layer));
          continue;
        }
        const TensorShape& produced = layers[op.layer].output;
        if (!(produced == op.shape)) {
          complain(l, where + " expects " + shape_str(op.shape) + " but edge from " +
                          layers[op.layer].name + " carries " + shape_str(produced));
        }
      } else if (op.source == OperandSource::GraphInput) {
        if (!(graph.input_shape() == op.shape)) {
          complain(l, where + " expects " + shape_str(op.shape) +
                          " but graph input is " + shape_str(graph.input_shape()));
        }
      }
    }

    switch (l.kind) {
      case LayerKind::MatMulWeights:
      case LayerKind::MatMulFeatures: {
        if (l.inputs.size() != 2) {
          complain(l, "matmul needs exactly 2 inputs");
          break;
        }
        const auto& a = l.inputs[0].shape;
        const auto& b = l.inputs[1].shape;
        if (a.cols() != b.rows()) {
          complain(l, "inner dimensions differ (" + shape_str(a) + " * " +
                          shape_str(b) + ")");
        }
        if (!(l.output == TensorShape{a.rows(), b.cols()})) {
          complain(l, "output " + shape_str(l.output) + " is not R x T = " +
                          std::to_string(a.rows()) + "x" + std::to_string(b.cols()));
        }
        const bool weights = l.inputs[1].source == OperandSource::Weight;
        if (weights != (l.kind == LayerKind::MatMulWeights)) {
          complain(l, "kind does not match the I2 operand source");
        }
        break;
      }
      case LayerKind::Transpose:
        if (l.inputs.size() != 1) {
          complain(l, "transpose needs exactly 1 input");
        } else if (!(l.output == l.inputs[0].shape.transposed())) {
          complain(l, "transpose output " + shape_str(l.output) +
                          " is not the swapped input " + shape_str(l.inputs[0].shape));
        }
        break;
      case LayerKind::Softmax:
      case LayerKind::ElementwiseScale:
        if (l.inputs.size() != 1) {
          complain(l, "needs exactly 1 input");
        } else if (!(l.output == l.inputs[0].shape)) {
          complain(l, "output shape differs from input shape");
        }
        break;
    }
  }

  // Kahn's algorithm over layer edges.
  std::vector<std::size_t> indegree(layers.size(), 0);
  std::vector<std::vector<LayerId>> succ(layers.size());
  for (const auto& l : layers) {
    for (auto [pred, slot] : l.predecessors()) {
      if (pred < layers.size()) {
        ++indegree[l.id];
        succ[pred].push_back(l.id);
      }
    }
  }
  std::queue<LayerId> ready;
  for (LayerId id = 0; id < layers.size(); ++id) {
    if (indegree[id] == 0) ready.push(id);
  }
  std::size_t visited = 0;
  while (!ready.empty()) {
    LayerId id = ready.front();
    ready.pop();
    ++visited;
    for (LayerId s : succ[id]) {
      if (--indegree[s] == 0) ready.push(s);
    }
  }
  if (visited != layers.size()) {
    for (LayerId id = 0; id < layers.size(); ++id) {
      if (indegree[id] > 0) complain(layers[id], "part of a dependency cycle");
    }
  }
  return report;
}

namespace {

std::size_t positive_field(const nlohmann::json& obj, std::string_view key,
                           std::int64_t fallback, bool required,
                           std::string_view text) {
  std::int64_t v = required ? detail::require<std::int64_t>(obj, key, "", text)
                            : detail::optional<std::int64_t>(obj, key, fallback, "", text);
  if (v < 1) {
    throw ConfigError("must be a positive integer", detail::line_of_key(text, key),
                      "/" + std::string(key));
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

WorkloadConfig parse_workload(std::string_view text) {
  nlohmann::json j = detail::parse_json(text);
  if (!j.is_object()) throw ConfigError("workload must be a JSON object", 1, "");
  WorkloadConfig cfg;
  cfg.m = positive_field(j, "M", 0, true, text);
  cfg.n = positive_field(j, "N", 0, true, text);
  cfg.heads = positive_field(j, "heads", 1, false, text);
  cfg.word_bytes = positive_field(j, "word_bytes", 1, false, text);
  return cfg;
}

WorkloadConfig load_workload_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open workload file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_workload(ss.str());
}

std::string dump_workload(const WorkloadConfig& config) {
  nlohmann::ordered_json j;
  j["M"] = config.m;
  j["N"] = config.n;
  j["heads"] = config.heads;
  j["word_bytes"] = config.word_bytes;
  return j.dump(2) + "\n";
}

namespace {

bool parse_size(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && out > 0;
}

}  // namespace

bool parse_workload_name(std::string_view name, WorkloadConfig& out) {
  WorkloadConfig cfg;
  std::string_view rest;
  if (name.starts_with("head_")) {
    rest = name.substr(5);
  } else if (name.starts_with("mhsa_")) {
    rest = name.substr(5);
    auto us = rest.rfind('_');
    if (us == std::string_view::npos || !parse_size(rest.substr(us + 1), cfg.heads)) {
      return false;
    }
    rest = rest.substr(0, us);
  } else {
    return false;
  }
  auto x = rest.find('x');
  if (x == std::string_view::npos) return false;
  if (!parse_size(rest.substr(0, x), cfg.m) || !parse_size(rest.substr(x + 1), cfg.n)) {
    return false;
  }
  out = cfg;
  return true;
}

}  // namespace attnsched
