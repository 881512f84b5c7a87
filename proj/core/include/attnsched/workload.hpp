#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace attnsched {

using LayerId = std::size_t;

/// Tensor id used for the shared graph input (the M x N activation matrix).
inline constexpr LayerId kGraphInput = std::numeric_limits<LayerId>::max();

/// Row-major matrix extent, in elements. Both extents are >= 1.
class TensorShape {
 public:
  TensorShape(std::size_t rows, std::size_t cols);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t words() const { return rows_ * cols_; }
  TensorShape transposed() const { return {cols_, rows_}; }

  friend bool operator==(const TensorShape&, const TensorShape&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
};

enum class LayerKind {
  MatMulWeights,   // I2 is a resident weight matrix
  MatMulFeatures,  // both operands are produced feature tensors
  Transpose,
  Softmax,  // row-wise
  ElementwiseScale,  // 1/sqrt(d_k); always folded into W_Q, never emitted
};

inline constexpr LayerKind kAllLayerKinds[] = {
    LayerKind::MatMulWeights, LayerKind::MatMulFeatures, LayerKind::Transpose,
    LayerKind::Softmax, LayerKind::ElementwiseScale};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);
bool is_matmul(LayerKind kind);

/// Position of a layer inside one attention head.
enum class AttentionRole { Query, Key, Value, KeyT, Scores, Probs, Output, Other };

std::string_view to_string(AttentionRole role);
AttentionRole attention_role_from_string(std::string_view name);

enum class OperandSource { GraphInput, Layer, Weight };

struct Operand {
  OperandSource source = OperandSource::GraphInput;
  LayerId layer = kGraphInput;  // valid for OperandSource::Layer
  TensorShape shape;

  bool is_feature() const { return source != OperandSource::Weight; }
  /// Tensor this operand reads, or kGraphInput. Meaningless for weights.
  LayerId tensor() const {
    return source == OperandSource::Layer ? layer : kGraphInput;
  }
};

struct Layer {
  LayerId id = 0;
  std::string name;
  LayerKind kind = LayerKind::MatMulWeights;
  std::vector<Operand> inputs;  // slot order: I1, I2 for matmuls
  TensorShape output{1, 1};
  std::size_t head = 0;
  AttentionRole role = AttentionRole::Other;

  /// (producer layer, input slot) for every operand produced by a layer.
  std::vector<std::pair<LayerId, std::size_t>> predecessors() const;

  /// R*S*T for matmuls, 0 otherwise.
  std::uint64_t mac_count() const;
};

class LayerGraph {
 public:
  LayerGraph(TensorShape input_shape, std::size_t head_count);

  /// Appends a layer; its id is assigned from the current size.
  LayerId add(Layer layer);

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(LayerId id) const { return layers_.at(id); }
  std::size_t size() const { return layers_.size(); }
  const TensorShape& input_shape() const { return input_shape_; }
  std::size_t head_count() const { return head_count_; }

  /// Consumers of a tensor as (layer, slot) pairs; kGraphInput is allowed.
  std::vector<std::pair<LayerId, std::size_t>> consumers(LayerId tensor) const;

  std::uint64_t mac_count() const;

  /// Words of feature data produced by layers; transposes are views and
  /// contribute nothing.
  std::uint64_t produced_feature_words() const;

  /// Mutable access for building deliberately broken graphs in tests.
  std::vector<Layer>& mutable_layers() { return layers_; }

 private:
  TensorShape input_shape_;
  std::size_t head_count_;
  std::vector<Layer> layers_;
};

/// Seven-layer scaled dot-product attention head over an M x N input.
/// Layer order: Q, K, V, K^T, Q.K^T, softmax, P.V.
LayerGraph build_attention_head(std::size_t m, std::size_t n);

/// `heads` independent attention heads sharing the input tensor.
LayerGraph build_mhsa(std::size_t m, std::size_t n, std::size_t heads);

struct ShapeReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

/// Checks acyclicity and per-kind shape rules. Never throws.
ShapeReport validate_graph(const LayerGraph& graph);

struct WorkloadConfig {
  std::size_t m = 1;
  std::size_t n = 1;
  std::size_t heads = 1;
  std::size_t word_bytes = 1;

  LayerGraph build() const { return build_mhsa(m, n, heads); }
};

/// Parses the JSON workload file format ({"M", "N", "heads", "word_bytes"}).
WorkloadConfig parse_workload(std::string_view text);
WorkloadConfig load_workload_file(const std::string& path);
std::string dump_workload(const WorkloadConfig& config);

/// Accepts "head_<M>x<N>" and "mhsa_<M>x<N>_<heads>".
bool parse_workload_name(std::string_view name, WorkloadConfig& out);

}  // namespace attnsched
