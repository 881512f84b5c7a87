#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include <CLI11.hpp>

#include "attnsched/errors.hpp"
#include "json_util.hpp"

namespace attnsched::cli {

namespace fs = std::filesystem;

const std::vector<std::string>& artifact_names() {
  static const std::vector<std::string> names{"schedule_json", "memtrace_csv", "gantt_svg",
                                              "gantt_ascii",   "report_csv",   "alpha_svg"};
  return names;
}

ScheduleMode mode_from_string(std::string_view s) {
  if (s == "lbl") return ScheduleMode::LayerByLayer;
  if (s == "auto") return ScheduleMode::LayerFusedAuto;
  if (s == "template") return ScheduleMode::Template;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "' (lbl, auto, template)");
}

std::string_view to_string(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::LayerByLayer: return "lbl";
    case ScheduleMode::LayerFusedAuto: return "auto";
    case ScheduleMode::Template: return "template";
  }
  return "?";
}

void RunConfig::validate() const {
  ga.validate();
  double lambda = 0.5;
  SchedulePolicy::parse_priority(priority, lambda);
  if (mode == ScheduleMode::Template && template_name != "best") {
    const auto& names = template_names();
    if (std::find(names.begin(), names.end(), template_name) == names.end()) {
      throw std::invalid_argument("template: unknown '" + template_name + "'");
    }
  }
  for (const auto& e : emit) {
    const auto& names = artifact_names();
    if (std::find(names.begin(), names.end(), e) == names.end()) {
      throw std::invalid_argument("emit: unknown artifact '" + e + "'");
    }
  }
  if (heads && *heads == 0) throw std::invalid_argument("heads must be >= 1");
}

namespace {

std::set<std::string> parse_emit(const std::vector<std::string>& items) {
  std::set<std::string> out;
  for (const auto& item : items) {
    if (item == "all") {
      out.insert(artifact_names().begin(), artifact_names().end());
    } else {
      out.insert(item);
    }
  }
  return out;
}

}  // namespace

RunConfig parse_run_config(std::string_view text, RunConfig cfg) {
  using detail::optional;
  const nlohmann::json j = detail::parse_json(text);
  if (!j.is_object()) throw ConfigError("run configuration must be a JSON object", 1, "");
  static const std::set<std::string> keys{"workload", "heads", "hw", "mode", "policy", "template",
                                          "mapping", "ga", "seed", "out", "emit"};
  for (const auto& [k, v] : j.items()) {
    if (!keys.contains(k)) throw ConfigError("unknown key", detail::line_of_key(text, k), "/" + k);
  }
  auto wrap = [&](const std::string& key, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), detail::line_of_key(text, key), "/" + key);
    }
  };
  cfg.workload = optional<std::string>(j, "workload", cfg.workload, "", text);
  if (j.contains("heads")) cfg.heads = detail::require<std::size_t>(j, "heads", "", text);
  cfg.hw = optional<std::string>(j, "hw", cfg.hw, "", text);
  wrap("mode", [&] { cfg.mode = mode_from_string(optional<std::string>(j, "mode", std::string(to_string(cfg.mode)), "", text)); });
  cfg.priority = optional<std::string>(j, "policy", cfg.priority, "", text);
  cfg.template_name = optional<std::string>(j, "template", cfg.template_name, "", text);
  cfg.mapping = optional<std::string>(j, "mapping", cfg.mapping, "", text);
  cfg.ga.seed = optional<std::uint64_t>(j, "seed", cfg.ga.seed, "", text);
  cfg.out_dir = optional<std::string>(j, "out", cfg.out_dir.string(), "", text);
  if (j.contains("emit")) {
    cfg.emit = parse_emit(detail::require<std::vector<std::string>>(j, "emit", "", text));
  }
  if (j.contains("ga")) {
    const auto& g = j.at("ga");
    if (!g.is_object()) throw ConfigError("must be an object", detail::line_of_key(text, "ga"), "/ga");
    static const std::set<std::string> ga_keys{"enabled",  "population", "generations", "mutation",
                                               "crossover", "objective", "weight",      "threads"};
    for (const auto& [k, v] : g.items()) {
      if (!ga_keys.contains(k)) throw ConfigError("unknown key", detail::line_of_key(text, k), "/ga/" + k);
    }
    if (g.contains("enabled")) cfg.use_ga = detail::require<bool>(g, "enabled", "/ga", text);
    cfg.ga.population = optional<std::size_t>(g, "population", cfg.ga.population, "/ga", text);
    cfg.ga.generations = optional<std::size_t>(g, "generations", cfg.ga.generations, "/ga", text);
    cfg.ga.mutation_rate = optional<double>(g, "mutation", cfg.ga.mutation_rate, "/ga", text);
    cfg.ga.crossover_rate = optional<double>(g, "crossover", cfg.ga.crossover_rate, "/ga", text);
    cfg.ga.weight = optional<double>(g, "weight", cfg.ga.weight, "/ga", text);
    cfg.ga.threads = optional<std::size_t>(g, "threads", cfg.ga.threads, "/ga", text);
    if (g.contains("objective")) {
      wrap("objective", [&] {
        cfg.objective = objective_from_string(detail::require<std::string>(g, "objective", "/ga", text));
      });
    }
  }
  wrap("ga", [&] { cfg.ga.validate(); });
  return cfg;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run configuration '" + path + "'", 0, "");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

fs::path resolve_out_dir(const std::optional<std::string>& flag, const fs::path& fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') return env;
  return fallback;
}

namespace {

void write_file(const fs::path& dir, const std::string& name, const std::string& content, std::ostream& out) {
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << content;
  out << "wrote " << p.string() << "\n";
}

WorkloadConfig resolve_workload(const std::string& text) {
  WorkloadConfig wc;
  if (parse_workload_name(text, wc)) return wc;
  if (fs::exists(text)) return load_workload_file(text);
  throw std::invalid_argument("workload '" + text +
                              "' is neither head_<M>x<N>, mhsa_<M>x<N>_<heads> nor an existing file");
}

Objective objective_for(PriorityObjective p) {
  switch (p) {
    case PriorityObjective::Latency: return Objective::Latency;
    case PriorityObjective::Memory: return Objective::PeakMemory;
    case PriorityObjective::Weighted: return Objective::Weighted;
  }
  return Objective::Latency;
}

Allocation initial_allocation(const LayerGraph& g, const HardwareSpec& hw) {
  return hw.cores.size() > 1 ? head_per_core_allocation(g, hw) : default_allocation(g, hw);
}

/// Template with the best objective under the initial allocation.
std::string pick_template(const LayerGraph& g, const HardwareSpec& hw, const SchedulePolicy& base,
                          std::ostream& out) {
  const Allocation a = initial_allocation(g, hw);
  std::map<std::string, Metrics> m;
  for (const auto& name : template_names()) {
    SchedulePolicy p = base;
    p.template_name = name;
    const Run r = run_schedule(g, hw, p, a);
    m[name] = {r.result.makespan, r.result.energy, r.result.peak};
    out << "  candidate " << name << ": makespan " << r.result.makespan << ", peak " << r.result.peak
        << " words\n";
  }
  const Metrics& ref = m.at(template_names().front());
  auto key = [&](const Metrics& x) {
    const auto mk = static_cast<double>(x.makespan), pk = static_cast<double>(x.peak);
    switch (base.priority) {
      case PriorityObjective::Memory: return std::tuple{pk, mk, x.energy};
      case PriorityObjective::Weighted:
        return std::tuple{base.lambda * mk / std::max(1.0, static_cast<double>(ref.makespan)) +
                              (1.0 - base.lambda) * pk / std::max(1.0, static_cast<double>(ref.peak)),
                          mk, pk};
      case PriorityObjective::Latency: break;
    }
    return std::tuple{mk, pk, x.energy};
  };
  std::string best = template_names().front();
  for (const auto& name : template_names()) {
    if (key(m.at(name)) < key(m.at(best))) best = name;
  }
  return best;
}

bool has_closed_form(const std::string& name) {
  return name == "lbl_memory_optimal" || name == "lbl_memory_optimal_swapped" || name == "fuse_q_qkt" ||
         name == "fuse_qkt_qktv";
}

}  // namespace

int run_explore(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  LayerGraph graph(TensorShape(1, 1), 1);
  HardwareSpec hw;
  SchedulePolicy policy;
  WorkloadConfig wc;
  MappingOverrides overrides;
  try {
    cfg.validate();
    wc = resolve_workload(cfg.workload);
    if (cfg.heads) wc.heads = *cfg.heads;
    graph = wc.build();
    hw = resolve_hardware(cfg.hw, wc.word_bytes);
    policy.mode = cfg.mode;
    policy.priority = SchedulePolicy::parse_priority(cfg.priority, policy.lambda);
    if (!cfg.mapping.empty()) {
      std::ifstream in(cfg.mapping);
      if (!in) throw ConfigError("cannot open mapping file '" + cfg.mapping + "'", 0, "");
      std::stringstream ss;
      ss << in.rdbuf();
      overrides = parse_mapping_overrides(ss.str());
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  out << "workload M=" << wc.m << " N=" << wc.n << " heads=" << wc.heads << " on " << hw.name << "\n";
  if (policy.mode == ScheduleMode::Template) {
    policy.template_name = cfg.template_name;
    if (policy.template_name == "best") policy.template_name = pick_template(graph, hw, policy, out);
  }
  out << "policy " << describe(policy) << "\n";

  std::optional<ScheduleTemplate> tmpl;
  if (policy.mode == ScheduleMode::Template) tmpl = apply_template(policy.template_name, graph);
  const NodeGraph ng = fine_grained_graph(graph, tmpl ? tmpl->split : mapping_split(graph, hw));
  const CostModel costs(ng, hw, overrides);
  const ScheduleTemplate* tp = tmpl ? &*tmpl : nullptr;

  Allocation alloc = initial_allocation(graph, hw);
  std::optional<SearchResult> search;
  if (cfg.use_ga.value_or(hw.cores.size() > 1)) {
    GAConfig ga = cfg.ga;
    ga.objective = cfg.objective.value_or(objective_for(policy.priority));
    if (policy.priority == PriorityObjective::Weighted && !cfg.objective) ga.weight = policy.lambda;
    search = genetic_search(ng, costs, policy, ga, tp);
    alloc = search->allocation;
    out << "GA " << to_string(ga.objective) << ": " << search->evaluations << " evaluations ("
        << search->unique_evaluations << " unique)\n";
  }
  const ScheduleResult r = schedule(ng, costs, alloc, policy, tp);
  out << "makespan " << r.makespan << " cycles, peak " << r.peak << " words, energy "
      << format_double(r.energy) << "\n";
  if (hw.cores.size() > 1) {
    for (std::size_t c = 0; c < r.core_traces.size(); ++c) {
      out << "  " << hw.cores[c].name << " peak " << r.core_traces[c].peak() << " words\n";
    }
  }

  VerifyReport checks;
  const double mn = static_cast<double>(wc.m) * static_cast<double>(wc.n);
  checks.checks.push_back({"trace starts at MN", mn, static_cast<double>(r.trace.initial()),
                           static_cast<double>(r.trace.initial()) == mn});
  checks.checks.push_back({"trace ends at heads*MN", mn * static_cast<double>(wc.heads),
                           static_cast<double>(r.trace.final_words()),
                           static_cast<double>(r.trace.final_words()) == mn * static_cast<double>(wc.heads)});
  if (tmpl && wc.heads == 1 && hw.cores.size() == 1 && has_closed_form(tmpl->name)) {
    const bool lbl = tmpl->name.starts_with("lbl_");
    const auto expected = lbl ? closed_form_lbl(wc.m, wc.n) : closed_form_lf(wc.m, wc.n, tmpl->name);
    checks.checks.push_back({tmpl->name + " peak == closed form", static_cast<double>(expected),
                             static_cast<double>(r.peak), r.peak == expected});
  }

  try {
    const fs::path& dir = cfg.out_dir;
    if (cfg.emit.contains("schedule_json")) write_file(dir, "schedule.json", schedule_json(ng, hw, r), out);
    if (cfg.emit.contains("memtrace_csv")) {
      write_file(dir, "memtrace.csv", memtrace_csv(r.trace), out);
      if (hw.cores.size() > 1) {
        for (std::size_t c = 0; c < r.core_traces.size(); ++c) {
          write_file(dir, "memtrace_" + hw.cores[c].name + ".csv", memtrace_csv(r.core_traces[c]), out);
        }
      }
    }
    if (cfg.emit.contains("gantt_svg")) write_file(dir, "gantt.svg", gantt_svg(ng, hw, r), out);
    if (cfg.emit.contains("gantt_ascii")) write_file(dir, "gantt.txt", gantt_ascii(ng, hw, r), out);
    if (cfg.emit.contains("report_csv")) write_file(dir, "report.csv", report_csv({footprint_report(wc.m, wc.n)}), out);
    if (cfg.emit.contains("alpha_svg")) write_file(dir, "alpha.svg", alpha_svg(1.0 / 64, 64), out);
    if (search) write_file(dir, "ga_log.csv", ga_log_csv(*search), out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  if (!checks.ok()) {
    err << checks.text();
    return 1;
  }
  return 0;
}

GAConfig default_multihead_ga() {
  GAConfig g;
  g.population = 24;
  g.generations = 24;
  return g;
}

int run_verify(const VerifyConfig& cfg, std::ostream& out, std::ostream& err) {
  VerifyReport rep;
  auto push = [&](std::string name, double expected, double actual, bool pass) {
    rep.checks.push_back({std::move(name), expected, actual, pass});
  };
  try {
    push("alpha(1024,128) == 0.3", 0.3, alpha(1024, 128).ratio, alpha(1024, 128).ratio == 0.3);
    const double a = alpha(128, 1024).ratio;
    push("alpha(128,1024) == 2176/3072", 2176.0 / 3072.0, a, std::abs(a - 2176.0 / 3072.0) < 1e-12);
    for (auto s : cfg.sizes) {
      push("alpha(" + std::to_string(s) + "," + std::to_string(s) + ") == 1", 1.0, alpha(s, s).ratio,
           alpha(s, s).ratio == 1.0);
      for (auto t : cfg.sizes) {
        for (std::size_t k = 2; k <= 4; ++k) {
          const double base = alpha(s, t).ratio, scaled = alpha(k * s, k * t).ratio;
          push("alpha(" + std::to_string(k) + "M," + std::to_string(k) + "N) == alpha(M,N) at M=" +
                   std::to_string(s) + " N=" + std::to_string(t),
               base, scaled, base == scaled);
        }
      }
    }
    const LimitReport lim = alpha_limits(8, 0.01);
    push("|alpha - 2/3| < 0.01 at M/N = 1/256", 0.0, lim.small.back().error, lim.small.back().error < 0.01);
    push("|alpha*M/(3N) - 1| < 0.01 at M/N = 256", 0.0, lim.large.back().error, lim.large.back().error < 0.01);
    push("limit errors shrink every octave", 1.0, lim.monotone ? 1.0 : 0.0, lim.monotone);

    const HardwareSpec hw = resolve_hardware(cfg.hw);
    rep.append(verify_grid(cfg.sizes, hw, cfg.forms, cfg.threads));
    if (cfg.multihead) {
      const MultiheadReport mh = multihead_check(128, 64, 4, builtin_platform("quad64x64"),
                                                 builtin_platform("single64x64"), cfg.multihead_ga);
      rep.append(mh.checks);
    }
    if (cfg.scaling) {
      const ScalingReport sc = seqlen_scaling_check(builtin_platform("gap8like"), 32, 81, 128, cfg.scaling_ga);
      rep.append(sc.checks);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  const std::string text = rep.text();
  out << text;
  const auto failed = rep.failures().size();
  out << rep.checks.size() << " checks, " << failed << " failed\n";
  try {
    write_file(cfg.out_dir, "verify.txt", text, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  for (const Check* c : rep.failures()) err << "violated: " << c->name << "\n";
  return failed == 0 ? 0 : 1;
}

int run_alpha(std::string_view sweep, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  try {
    const auto [lo, hi] = parse_ratio_range(sweep);
    std::vector<FootprintReport> rows;
    for (auto [m, n] : sweep_points(lo, hi)) rows.push_back(footprint_report(m, n));
    const std::string csv = report_csv(rows);
    out << csv;
    write_file(out_dir, "alpha.csv", csv, out);
    write_file(out_dir, "alpha.svg", alpha_svg(lo, hi), out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run_export_platforms(const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  try {
    for (const auto& [name, platform] : builtin_platforms()) write_file(out_dir, name + ".json", export_hardware(platform), out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int main_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-by-layer and layer-fused attention scheduling on multi-core accelerators"};
  app.require_subcommand(1);

  std::optional<std::string> out_flag;
  std::string config_path;
  std::string workload, hw_name, mode, priority, tmpl, mapping, objective;
  std::vector<std::string> emit;
  std::size_t heads = 0, population = 0, generations = 0, threads = 0;
  double mutation = 0, crossover = 0, weight = 0;
  std::uint64_t seed = 0;
  bool ga_on = false, ga_off = false;

  auto* explore = app.add_subcommand("explore", "Schedule one workload and emit artifacts");
  explore->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  explore->add_option("--workload", workload, "head_<M>x<N>, mhsa_<M>x<N>_<heads> or a JSON file");
  explore->add_option("--heads", heads, "Number of attention heads")->check(CLI::PositiveNumber);
  explore->add_option("--hw", hw_name, "Builtin platform or JSON file");
  explore->add_option("--mode", mode, "lbl, auto or template");
  explore->add_option("--policy", priority, "latency, memory or weighted:<lambda>");
  explore->add_option("--template", tmpl, "Template name or best")->excludes("--mode");
  explore->add_option("--mapping", mapping, "JSON mapping overrides")->check(CLI::ExistingFile);
  explore->add_flag("--ga", ga_on, "Run the GA even on one core");
  explore->add_flag("--no-ga", ga_off, "Keep the initial allocation")->excludes("--ga");
  explore->add_option("--population", population, "GA population");
  explore->add_option("--generations", generations, "GA generations");
  explore->add_option("--mutation", mutation, "GA per-gene mutation rate");
  explore->add_option("--crossover", crossover, "GA crossover rate");
  explore->add_option("--objective", objective, "latency, energy, peak_memory or weighted");
  explore->add_option("--weight", weight, "Latency share of the weighted objective");
  explore->add_option("--threads", threads, "GA evaluation threads");
  explore->add_option("--seed", seed, "GA seed");
  explore->add_option("--emit", emit, "Artifacts (comma separated, or all)")->delimiter(',');
  explore->add_option("--out", out_flag, "Output directory");

  VerifyConfig vcfg;
  std::size_t vthreads = 1;
  bool no_multihead = false, no_scaling = false;
  auto* verify = app.add_subcommand("verify", "Closed-form, simulation and scaling checks");
  verify->add_option("--sizes", vcfg.sizes, "M and N values of the grid")->delimiter(',');
  verify->add_option("--hw", vcfg.hw, "Platform for the grid");
  verify->add_option("--threads", vthreads, "Grid threads");
  verify->add_flag("--no-multihead", no_multihead, "Skip the multi-core check");
  verify->add_flag("--no-scaling", no_scaling, "Skip the sequence-length check");
  verify->add_option("--seed", vcfg.multihead_ga.seed, "GA seed for the multi-core and scaling checks");
  verify->add_option("--out", out_flag, "Output directory");

  std::string sweep = "1/64..64";
  auto* alpha_cmd = app.add_subcommand("alpha", "Alpha over a sweep of M/N");
  alpha_cmd->add_option("--sweep", sweep, "Ratio range lo..hi, e.g. 1/64..64");
  alpha_cmd->add_option("--out", out_flag, "Output directory");

  auto* exportp = app.add_subcommand("export-platforms", "Write the builtin platforms as JSON");
  exportp->add_option("--out", out_flag, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  if (*explore) {
    RunConfig cfg;
    try {
      if (!config_path.empty()) cfg = load_run_config(config_path);
      if (explore->count("--workload")) cfg.workload = workload;
      if (explore->count("--heads")) cfg.heads = heads;
      if (explore->count("--hw")) cfg.hw = hw_name;
      if (explore->count("--mode")) cfg.mode = mode_from_string(mode);
      if (explore->count("--template")) {
        cfg.mode = ScheduleMode::Template;
        cfg.template_name = tmpl;
      }
      if (explore->count("--policy")) cfg.priority = priority;
      if (explore->count("--mapping")) cfg.mapping = mapping;
      if (ga_on) cfg.use_ga = true;
      if (ga_off) cfg.use_ga = false;
      if (explore->count("--population")) cfg.ga.population = population;
      if (explore->count("--generations")) cfg.ga.generations = generations;
      if (explore->count("--mutation")) cfg.ga.mutation_rate = mutation;
      if (explore->count("--crossover")) cfg.ga.crossover_rate = crossover;
      if (explore->count("--objective")) cfg.objective = objective_from_string(objective);
      if (explore->count("--weight")) cfg.ga.weight = weight;
      if (explore->count("--threads")) cfg.ga.threads = threads;
      if (explore->count("--seed")) cfg.ga.seed = seed;
      if (explore->count("--emit")) cfg.emit = parse_emit(emit);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return 2;
    }
    cfg.out_dir = resolve_out_dir(out_flag, cfg.out_dir);
    return run_explore(cfg, out, err);
  }
  if (*verify) {
    vcfg.multihead = !no_multihead;
    vcfg.scaling = !no_scaling;
    vcfg.threads = vthreads;
    vcfg.scaling_ga.seed = vcfg.multihead_ga.seed;
    vcfg.out_dir = resolve_out_dir(out_flag, vcfg.out_dir);
    return run_verify(vcfg, out, err);
  }
  if (*alpha_cmd) return run_alpha(sweep, resolve_out_dir(out_flag, "out"), out, err);
  return run_export_platforms(resolve_out_dir(out_flag, "out"), out, err);
}

}  // namespace attnsched::cli
