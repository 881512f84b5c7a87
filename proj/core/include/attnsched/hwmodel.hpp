#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "attnsched/workload.hpp"

namespace attnsched {

/// Matmul operand roles: left input, right input, output.
enum class OperandRole { I1, I2, O };

std::string_view to_string(OperandRole role);

struct Core {
  std::size_t id = 0;
  std::string name;
  std::size_t array_rows = 1;
  std::size_t array_cols = 1;
  std::size_t macs_per_pe = 1;
  std::map<OperandRole, std::size_t> register_file_words;
  std::set<LayerKind> supports;

  std::uint64_t peak_macs() const {
    return std::uint64_t{array_rows} * array_cols * macs_per_pe;
  }

  friend bool operator==(const Core&, const Core&) = default;
};

/// Vector post-processing unit placed next to a core.
struct SimdUnit {
  std::size_t id = 0;
  std::string name;
  std::size_t lanes = 1;
  std::set<LayerKind> supports;
  std::size_t attached_core = 0;

  friend bool operator==(const SimdUnit&, const SimdUnit&) = default;
};

struct MemoryLevel {
  std::string name;
  std::size_t level = 1;  // 0 = PE register files
  std::uint64_t capacity = 1;  // words
  double read_bw = 1.0;   // words/cycle
  double write_bw = 1.0;  // words/cycle
  double access_cost = 1.0;  // energy units per word
  std::set<OperandRole> serves;
  bool shared = false;  // one instance for all cores (else one per core)

  friend bool operator==(const MemoryLevel&, const MemoryLevel&) = default;
};

struct Link {
  std::string from;
  std::string to;
  double bw = 1.0;  // words/cycle
  std::uint64_t setup = 0;  // cycles per transfer

  friend bool operator==(const Link&, const Link&) = default;
};

/// Index into HardwareSpec::resources(): cores first, then SIMD units.
using ResourceId = std::size_t;

struct OperandFeed {
  double bw = 0.0;  // words/cycle
  std::uint64_t setup = 0;
  std::string level;  // feeding level, or "from->to" when a link limits it
};

class HardwareSpec {
 public:
  std::string name;
  std::string clock;
  std::vector<Core> cores;
  std::vector<SimdUnit> simd_units;
  std::vector<MemoryLevel> memories;
  std::vector<Link> links;
  /// Memory level holding weight matrices; empty = same as other inputs.
  std::string weight_level;
  /// Core-to-core feature forwarding bandwidth; 0 = array_cols of the
  /// producing core.
  double forwarding_bw = 0.0;

  std::size_t resource_count() const { return cores.size() + simd_units.size(); }
  bool is_simd(ResourceId r) const { return r >= cores.size(); }
  const SimdUnit& simd(ResourceId r) const { return simd_units.at(r - cores.size()); }
  std::string resource_name(ResourceId r) const;
  bool supports(ResourceId r, LayerKind kind) const;
  /// Core a resource belongs to (itself for cores, the attached core for SIMD).
  std::size_t home_core(ResourceId r) const;

  std::uint64_t peak_macs() const;

  /// Lowest non-register level serving an operand.
  const MemoryLevel* feeding_level(OperandRole role) const;
  const MemoryLevel* register_level() const;
  const MemoryLevel* level_named(std::string_view name) const;
  const Link* link(std::string_view from, std::string_view to) const;

  /// Effective input bandwidth for an operand, including the link from the
  /// weight level when weights live further out.
  OperandFeed feed(OperandRole role, bool is_weight) const;

  /// Cycles to move `words` of features between two resources.
  std::uint64_t transfer_cycles(ResourceId from, ResourceId to, std::uint64_t words) const;

  /// True when features can bypass counted memory between the two resources.
  bool connected(ResourceId a, ResourceId b) const;

  /// Layer kinds of attention workloads no resource supports.
  std::vector<LayerKind> capability_gaps() const;

  friend bool operator==(const HardwareSpec&, const HardwareSpec&) = default;
};

/// Parses the JSON hardware format. Links may give "bw_bits" instead of
/// "bw"; those are converted with `word_bytes`. Throws ConfigError naming the
/// line and field, including one entry per unsupported layer kind.
HardwareSpec load_hardware(std::string_view text, std::size_t word_bytes = 1);
HardwareSpec load_hardware_file(const std::string& path, std::size_t word_bytes = 1);
std::string export_hardware(const HardwareSpec& spec);

/// "single64x64", "quad64x64" and "gap8like".
std::map<std::string, HardwareSpec> builtin_platforms(std::size_t word_bytes = 1);
/// Throws std::out_of_range for an unknown name.
HardwareSpec builtin_platform(std::string_view name, std::size_t word_bytes = 1);

/// Builtin name or path to a JSON file.
HardwareSpec resolve_hardware(const std::string& name_or_path, std::size_t word_bytes = 1);

}  // namespace attnsched
