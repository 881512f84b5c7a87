#include "attnsched/hwmodel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "attnsched/errors.hpp"
#include "json_util.hpp"

namespace attnsched {

std::string_view to_string(OperandRole role) {
  switch (role) {
    case OperandRole::I1: return "I1";
    case OperandRole::I2: return "I2";
    case OperandRole::O: return "O";
  }
  return "?";
}

namespace {

OperandRole operand_role_from_string(std::string_view s) {
  for (auto r : {OperandRole::I1, OperandRole::I2, OperandRole::O}) {
    if (to_string(r) == s) return r;
  }
  throw std::invalid_argument("unknown operand '" + std::string(s) + "'");
}

std::uint64_t ceil_div(double words, double bw) {
  return static_cast<std::uint64_t>(std::ceil(words / bw - 1e-9));
}

constexpr LayerKind kRequiredKinds[] = {LayerKind::MatMulWeights, LayerKind::MatMulFeatures,
                                        LayerKind::Transpose, LayerKind::Softmax};

}  // namespace

std::string HardwareSpec::resource_name(ResourceId r) const {
  return is_simd(r) ? simd(r).name : cores.at(r).name;
}

bool HardwareSpec::supports(ResourceId r, LayerKind kind) const {
  if (r >= resource_count()) return false;
  return is_simd(r) ? simd(r).supports.contains(kind) : cores[r].supports.contains(kind);
}

std::size_t HardwareSpec::home_core(ResourceId r) const {
  return is_simd(r) ? simd(r).attached_core : r;
}

std::uint64_t HardwareSpec::peak_macs() const {
  std::uint64_t total = 0;
  for (const auto& c : cores) total += c.peak_macs();
  return total;
}

const MemoryLevel* HardwareSpec::feeding_level(OperandRole role) const {
  const MemoryLevel* best = nullptr;
  for (const auto& m : memories) {
    if (m.level == 0 || !m.serves.contains(role)) continue;
    if (best == nullptr || m.level < best->level) best = &m;
  }
  return best;
}

const MemoryLevel* HardwareSpec::register_level() const {
  for (const auto& m : memories) {
    if (m.level == 0) return &m;
  }
  return nullptr;
}

const MemoryLevel* HardwareSpec::level_named(std::string_view n) const {
  for (const auto& m : memories) {
    if (m.name == n) return &m;
  }
  return nullptr;
}

const Link* HardwareSpec::link(std::string_view from, std::string_view to) const {
  for (const auto& l : links) {
    if (l.from == from && l.to == to) return &l;
  }
  return nullptr;
}

OperandFeed HardwareSpec::feed(OperandRole role, bool is_weight) const {
  const MemoryLevel* lvl = feeding_level(role);
  if (lvl == nullptr) {
    const MemoryLevel* rf = register_level();
    if (rf == nullptr) return {1e18, 0, ""};
    return {rf->read_bw, 0, rf->name};
  }
  OperandFeed f{lvl->read_bw, 0, lvl->name};
  if (is_weight && !weight_level.empty() && weight_level != lvl->name) {
    if (const Link* l = link(weight_level, lvl->name)) {
      f.bw = std::min(f.bw, l->bw);
      f.setup = l->setup;
      f.level = l->from + "->" + l->to;
    }
  }
  return f;
}

std::uint64_t HardwareSpec::transfer_cycles(ResourceId from, ResourceId to,
                                            std::uint64_t words) const {
  const std::size_t a = home_core(from);
  const std::size_t b = home_core(to);
  if (a == b || words == 0) return 0;
  if (const MemoryLevel* lvl = feeding_level(OperandRole::O); lvl && lvl->shared) return 0;
  if (const Link* l = link(cores.at(a).name, cores.at(b).name)) {
    return l->setup + ceil_div(static_cast<double>(words), l->bw);
  }
  const double bw = forwarding_bw > 0 ? forwarding_bw : static_cast<double>(cores.at(a).array_cols);
  return ceil_div(static_cast<double>(words), bw);
}

bool HardwareSpec::connected(ResourceId a, ResourceId b) const {
  const std::size_t ca = home_core(a);
  const std::size_t cb = home_core(b);
  if (ca == cb) return true;
  return link(cores.at(ca).name, cores.at(cb).name) != nullptr;
}

std::vector<LayerKind> HardwareSpec::capability_gaps() const {
  std::vector<LayerKind> gaps;
  for (LayerKind k : kRequiredKinds) {
    bool any = false;
    for (ResourceId r = 0; r < resource_count(); ++r) any = any || supports(r, k);
    if (!any) gaps.push_back(k);
  }
  return gaps;
}

namespace {

using nlohmann::json;
using detail::line_of_key;

std::set<LayerKind> parse_kinds(const json& arr, const std::string& path, std::string_view text) {
  std::set<LayerKind> out;
  if (!arr.is_array()) throw ConfigError("expected an array of layer kinds", line_of_key(text, "supports"), path);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    try {
      out.insert(layer_kind_from_string(arr[i].get<std::string>()));
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), line_of_key(text, "supports"), path + "/" + std::to_string(i));
    }
  }
  return out;
}

std::set<OperandRole> parse_roles(const json& arr, const std::string& path, std::string_view text) {
  std::set<OperandRole> out;
  if (!arr.is_array()) throw ConfigError("expected an array of operands", line_of_key(text, "serves"), path);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    try {
      out.insert(operand_role_from_string(arr[i].get<std::string>()));
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), line_of_key(text, "serves"), path + "/" + std::to_string(i));
    }
  }
  return out;
}

std::size_t positive(const json& obj, std::string_view key, const std::string& path,
                      std::string_view text, std::int64_t fallback = -1) {
  std::int64_t v = fallback < 0 ? detail::require<std::int64_t>(obj, key, path, text)
                                : detail::optional<std::int64_t>(obj, key, fallback, path, text);
  if (v < 1) throw ConfigError("must be >= 1", line_of_key(text, key), path + "/" + std::string(key));
  return static_cast<std::size_t>(v);
}

double positive_real(const json& obj, std::string_view key, const std::string& path,
                     std::string_view text) {
  double v = detail::require<double>(obj, key, path, text);
  if (!(v > 0)) throw ConfigError("must be > 0", line_of_key(text, key), path + "/" + std::string(key));
  return v;
}

const json& array_field(const json& j, std::string_view key, std::string_view text, bool required) {
  static const json empty = json::array();
  if (!j.contains(key)) {
    if (required) throw ConfigError("missing required field", line_of_key(text, key), "/" + std::string(key));
    return empty;
  }
  const json& a = j.at(std::string(key));
  if (!a.is_array()) throw ConfigError("expected an array", line_of_key(text, key), "/" + std::string(key));
  return a;
}

}  // namespace

HardwareSpec load_hardware(std::string_view text, std::size_t word_bytes) {
  if (word_bytes == 0) throw std::invalid_argument("word_bytes must be >= 1");
  json j = detail::parse_json(text);
  if (!j.is_object()) throw ConfigError("hardware config must be a JSON object", 1, "");

  HardwareSpec hw;
  hw.name = detail::optional<std::string>(j, "name", "custom", "", text);
  hw.clock = detail::optional<std::string>(j, "clock", "", "", text);
  hw.weight_level = detail::optional<std::string>(j, "weight_level", "", "", text);
  hw.forwarding_bw = detail::optional<double>(j, "forwarding_bw", 0.0, "", text);

  const json& cores = array_field(j, "cores", text, true);
  for (std::size_t i = 0; i < cores.size(); ++i) {
    const std::string path = "/cores/" + std::to_string(i);
    const json& c = cores[i];
    Core core;
    core.id = i;
    core.name = detail::optional<std::string>(c, "name", "core" + std::to_string(i), path, text);
    core.array_rows = positive(c, "array_rows", path, text);
    core.array_cols = positive(c, "array_cols", path, text);
    core.macs_per_pe = positive(c, "macs_per_pe", path, text, 1);
    if (c.contains("register_file_words")) {
      const json& rf = c.at("register_file_words");
      if (!rf.is_object()) throw ConfigError("expected an object", line_of_key(text, "register_file_words"), path + "/register_file_words");
      for (const auto& [k, v] : rf.items()) {
        try {
          core.register_file_words[operand_role_from_string(k)] = v.get<std::size_t>();
        } catch (const std::exception& e) {
          throw ConfigError(e.what(), line_of_key(text, "register_file_words"), path + "/register_file_words/" + k);
        }
      }
    }
    if (!c.contains("supports")) throw ConfigError("missing required field", line_of_key(text, "supports"), path + "/supports");
    core.supports = parse_kinds(c.at("supports"), path + "/supports", text);
    hw.cores.push_back(std::move(core));
  }
  if (hw.cores.empty()) throw ConfigError("at least one core is required", line_of_key(text, "cores"), "/cores");

  const json& simd = array_field(j, "simd", text, false);
  for (std::size_t i = 0; i < simd.size(); ++i) {
    const std::string path = "/simd/" + std::to_string(i);
    const json& s = simd[i];
    SimdUnit u;
    u.id = i;
    u.name = detail::optional<std::string>(s, "name", "simd" + std::to_string(i), path, text);
    u.lanes = positive(s, "lanes", path, text);
    u.attached_core = detail::optional<std::size_t>(s, "attached_core", 0, path, text);
    if (u.attached_core >= hw.cores.size()) {
      throw ConfigError("attached_core out of range", line_of_key(text, "attached_core"), path + "/attached_core");
    }
    if (!s.contains("supports")) throw ConfigError("missing required field", line_of_key(text, "supports"), path + "/supports");
    u.supports = parse_kinds(s.at("supports"), path + "/supports", text);
    hw.simd_units.push_back(std::move(u));
  }

  const json& mems = array_field(j, "memories", text, true);
  for (std::size_t i = 0; i < mems.size(); ++i) {
    const std::string path = "/memories/" + std::to_string(i);
    const json& m = mems[i];
    MemoryLevel lvl;
    lvl.name = detail::require<std::string>(m, "name", path, text);
    lvl.level = detail::optional<std::size_t>(m, "level", 1, path, text);
    lvl.capacity = positive(m, "capacity", path, text);
    lvl.read_bw = positive_real(m, "read_bw", path, text);
    lvl.write_bw = positive_real(m, "write_bw", path, text);
    lvl.access_cost = detail::optional<double>(m, "access_cost", 1.0, path, text);
    if (lvl.access_cost < 0) throw ConfigError("must be >= 0", line_of_key(text, "access_cost"), path + "/access_cost");
    if (!m.contains("serves")) throw ConfigError("missing required field", line_of_key(text, "serves"), path + "/serves");
    lvl.serves = parse_roles(m.at("serves"), path + "/serves", text);
    lvl.shared = detail::optional<bool>(m, "shared", false, path, text);
    hw.memories.push_back(std::move(lvl));
  }

  const json& links = array_field(j, "links", text, false);
  for (std::size_t i = 0; i < links.size(); ++i) {
    const std::string path = "/links/" + std::to_string(i);
    const json& l = links[i];
    Link link;
    link.from = detail::require<std::string>(l, "from", path, text);
    link.to = detail::require<std::string>(l, "to", path, text);
    if (l.contains("bw_bits")) {
      double bits = positive_real(l, "bw_bits", path, text);
      link.bw = bits / (8.0 * static_cast<double>(word_bytes));
    } else {
      link.bw = positive_real(l, "bw", path, text);
    }
    link.setup = detail::optional<std::uint64_t>(l, "setup", 0, path, text);
    hw.links.push_back(std::move(link));
  }

  if (!hw.weight_level.empty() && hw.level_named(hw.weight_level) == nullptr) {
    throw ConfigError("no memory level named '" + hw.weight_level + "'",
                      line_of_key(text, "weight_level"), "/weight_level");
  }

  auto gaps = hw.capability_gaps();
  if (!gaps.empty()) {
    std::string msg = "capability gap: no core or SIMD unit supports";
    for (LayerKind k : gaps) msg += " " + std::string(to_string(k));
    throw ConfigError(msg, 0, "/supports");
  }
  return hw;
}

HardwareSpec load_hardware_file(const std::string& path, std::size_t word_bytes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open hardware file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_hardware(ss.str(), word_bytes);
}

std::string export_hardware(const HardwareSpec& hw) {
  nlohmann::ordered_json j;
  j["name"] = hw.name;
  if (!hw.clock.empty()) j["clock"] = hw.clock;
  auto kinds = [](const std::set<LayerKind>& s) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (LayerKind k : s) a.push_back(std::string(to_string(k)));
    return a;
  };
  j["cores"] = nlohmann::ordered_json::array();
  for (const auto& c : hw.cores) {
    nlohmann::ordered_json cj;
    cj["name"] = c.name;
    cj["array_rows"] = c.array_rows;
    cj["array_cols"] = c.array_cols;
    cj["macs_per_pe"] = c.macs_per_pe;
    nlohmann::ordered_json rf = nlohmann::ordered_json::object();
    for (const auto& [role, words] : c.register_file_words) rf[std::string(to_string(role))] = words;
    cj["register_file_words"] = rf;
    cj["supports"] = kinds(c.supports);
    j["cores"].push_back(cj);
  }
  j["simd"] = nlohmann::ordered_json::array();
  for (const auto& s : hw.simd_units) {
    nlohmann::ordered_json sj;
    sj["name"] = s.name;
    sj["lanes"] = s.lanes;
    sj["attached_core"] = s.attached_core;
    sj["supports"] = kinds(s.supports);
    j["simd"].push_back(sj);
  }
  j["memories"] = nlohmann::ordered_json::array();
  for (const auto& m : hw.memories) {
    nlohmann::ordered_json mj;
    mj["name"] = m.name;
    mj["level"] = m.level;
    mj["capacity"] = m.capacity;
    mj["read_bw"] = m.read_bw;
    mj["write_bw"] = m.write_bw;
    mj["access_cost"] = m.access_cost;
    nlohmann::ordered_json serves = nlohmann::ordered_json::array();
    for (OperandRole r : m.serves) serves.push_back(std::string(to_string(r)));
    mj["serves"] = serves;
    mj["shared"] = m.shared;
    j["memories"].push_back(mj);
  }
  j["links"] = nlohmann::ordered_json::array();
  for (const auto& l : hw.links) {
    nlohmann::ordered_json lj;
    lj["from"] = l.from;
    lj["to"] = l.to;
    lj["bw"] = l.bw;
    lj["setup"] = l.setup;
    j["links"].push_back(lj);
  }
  if (!hw.weight_level.empty()) j["weight_level"] = hw.weight_level;
  j["forwarding_bw"] = hw.forwarding_bw;
  return j.dump(2) + "\n";
}

namespace {

const std::set<LayerKind> kMacKinds{LayerKind::MatMulWeights, LayerKind::MatMulFeatures,
                                    LayerKind::Transpose};
const std::set<LayerKind> kSimdKinds{LayerKind::Softmax, LayerKind::ElementwiseScale};

Core pe_array_core(std::size_t id) {
  Core c;
  c.id = id;
  c.name = "core" + std::to_string(id);
  c.array_rows = 64;
  c.array_cols = 64;
  c.macs_per_pe = 1;
  c.register_file_words = {{OperandRole::I1, 1}, {OperandRole::I2, 1}, {OperandRole::O, 1}};
  c.supports = kMacKinds;
  return c;
}

// Two L1 memories: one for I1 and O at 64 words/cycle, one multi-banked
// memory for I2 at 4096 words/cycle. SIMD lanes are sized so a softmax row
// of up to 512 words takes one cycle.
HardwareSpec pe_array_platform(std::string name, std::size_t core_count) {
  HardwareSpec hw;
  hw.name = std::move(name);
  hw.clock = "1 GHz";
  for (std::size_t i = 0; i < core_count; ++i) {
    hw.cores.push_back(pe_array_core(i));
    hw.simd_units.push_back(SimdUnit{i, "simd" + std::to_string(i), 1024, kSimdKinds, i});
  }
  hw.memories = {
      MemoryLevel{"L0", 0, 3 * 4096, 4096.0, 4096.0, 0.02,
                  {OperandRole::I1, OperandRole::I2, OperandRole::O}, false},
      MemoryLevel{"L1_IO", 1, 1u << 20, 64.0, 64.0, 1.0, {OperandRole::I1, OperandRole::O}, false},
      MemoryLevel{"L1_W", 1, 1u << 20, 4096.0, 4096.0, 1.0, {OperandRole::I2}, false},
      MemoryLevel{"L2", 2, 1ull << 30, 64.0, 64.0, 100.0,
                  {OperandRole::I1, OperandRole::I2, OperandRole::O}, true},
  };
  return hw;
}

// Eight single-MAC cores sharing an L1; weights stream from L2 over a link
// whose effective width is 51 bits/cycle.
HardwareSpec gap8_platform(std::size_t word_bytes) {
  HardwareSpec hw;
  hw.name = "gap8like";
  hw.clock = "100 MHz";
  for (std::size_t i = 0; i < 8; ++i) {
    Core c;
    c.id = i;
    c.name = "core" + std::to_string(i);
    c.array_rows = 1;
    c.array_cols = 1;
    c.macs_per_pe = 1;
    c.register_file_words = {{OperandRole::I1, 4}, {OperandRole::I2, 4}, {OperandRole::O, 4}};
    c.supports = {LayerKind::MatMulWeights, LayerKind::MatMulFeatures, LayerKind::Transpose,
                  LayerKind::Softmax, LayerKind::ElementwiseScale};
    hw.cores.push_back(std::move(c));
  }
  const std::set<OperandRole> all{OperandRole::I1, OperandRole::I2, OperandRole::O};
  hw.memories = {
      MemoryLevel{"L0", 0, 96, 3.0, 3.0, 0.05, all, false},
      MemoryLevel{"L1", 1, 64 * 1024 / word_bytes, 4.0, 4.0, 1.0, all, true},
      MemoryLevel{"L2", 2, 512 * 1024 / word_bytes, 8.0, 8.0, 5.0, all, true},
      MemoryLevel{"L3", 3, 8 * 1024 * 1024 / word_bytes, 1.0, 1.0, 50.0, all, true},
  };
  hw.links = {Link{"L2", "L1", 51.0 / (8.0 * static_cast<double>(word_bytes)), 0},
              Link{"L3", "L2", 8.0 / (8.0 * static_cast<double>(word_bytes)), 0}};
  hw.weight_level = "L2";
  return hw;
}

}  // namespace

std::map<std::string, HardwareSpec> builtin_platforms(std::size_t word_bytes) {
  std::map<std::string, HardwareSpec> out;
  out.emplace("single64x64", pe_array_platform("single64x64", 1));
  out.emplace("quad64x64", pe_array_platform("quad64x64", 4));
  out.emplace("gap8like", gap8_platform(word_bytes));
  return out;
}

HardwareSpec builtin_platform(std::string_view name, std::size_t word_bytes) {
  auto all = builtin_platforms(word_bytes);
  auto it = all.find(std::string(name));
  if (it == all.end()) {
    throw std::out_of_range("unknown platform '" + std::string(name) +
                            "' (builtins: single64x64, quad64x64, gap8like)");
  }
  return it->second;
}

HardwareSpec resolve_hardware(const std::string& name_or_path, std::size_t word_bytes) {
  auto all = builtin_platforms(word_bytes);
  if (auto it = all.find(name_or_path); it != all.end()) return it->second;
  if (std::filesystem::exists(name_or_path)) return load_hardware_file(name_or_path, word_bytes);
  throw std::out_of_range("unknown platform '" + name_or_path +
                          "': not a builtin name and no such file");
}

}  // namespace attnsched
