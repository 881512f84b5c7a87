#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "attnsched/analysis.hpp"
#include "cli.hpp"

using namespace attnsched;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string secs(double s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << s << " s";
  return os.str();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& what) {
    if (pass) detail = what;
    pass = false;
  }
};

// Independent closed forms.
std::uint64_t lbl_peak(std::uint64_t m, std::uint64_t n) { return m <= n ? 3 * m * n : 2 * m * n + m * m; }

struct TemplateRun {
  std::uint64_t peak = 0;
  std::uint64_t makespan = 0;
  std::uint64_t first = 0;
  std::uint64_t last = 0;
};

using Grid = std::map<std::pair<std::size_t, std::size_t>, std::map<std::string, TemplateRun>>;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string out_dir = "acceptance_out";
  app.add_option("--out", out_dir, "Scratch directory for emitted files");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(out_dir);

  const std::vector<std::size_t> sizes{64, 128, 256, 512};
  const HardwareSpec single = builtin_platform("single64x64");
  std::map<int, Outcome> results;

  // Shared grid simulation for criteria 1, 3 and 8.
  Grid grid;
  const auto t_grid = Clock::now();
  for (std::size_t m : sizes) {
    for (std::size_t n : sizes) {
      const LayerGraph g = build_attention_head(m, n);
      for (const auto& name : template_names()) {
        SchedulePolicy p;
        p.mode = ScheduleMode::Template;
        p.template_name = name;
        const ScheduleResult r = run_schedule(g, single, p).result;
        grid[{m, n}][name] = {r.peak, r.makespan, r.trace.initial(), r.trace.final_words()};
      }
    }
  }
  const double grid_seconds = seconds_since(t_grid);

  {
    Outcome& o = results[1];
    for (const auto& [mn, runs] : grid) {
      const auto [m, n] = mn;
      const std::string at = "M=" + std::to_string(m) + " N=" + std::to_string(n);
      if (runs.at("lbl_memory_optimal").peak != lbl_peak(m, n)) o.fail(at + " lbl_memory_optimal");
      if (runs.at("fuse_q_qkt").peak != 2 * m * n + m * m) o.fail(at + " fuse_q_qkt");
      if (runs.at("fuse_qkt_qktv").peak != 3 * m * n) o.fail(at + " fuse_qkt_qktv");
    }
    if (grid_seconds >= 60) o.fail("grid took " + secs(grid_seconds));
    if (o.pass) o.detail = std::to_string(grid.size()) + " points, " + secs(grid_seconds);
  }

  {
    Outcome& o = results[2];
    if (alpha(1024, 128).ratio != 0.3) o.fail("alpha(1024,128) = " + format_double(alpha(1024, 128).ratio));
    if (std::abs(alpha(128, 1024).ratio - 2176.0 / 3072.0) > 1e-12) o.fail("alpha(128,1024)");
    for (std::size_t s : sizes) {
      if (alpha(s, s).ratio != 1.0) o.fail("alpha(M,M) at " + std::to_string(s));
    }
    const double small = alpha(1, 256).ratio;
    const double large = alpha(256, 1).ratio;
    if (!(std::abs(small - 2.0 / 3.0) < 0.01)) o.fail("limit at 1/256: " + format_double(small));
    if (!(std::abs(large * 256 / 3 - 1) < 0.01)) o.fail("limit at 256: " + format_double(large * 256 / 3));
    if (o.pass) {
      o.detail = "alpha(128,1024)=" + format_double(alpha(128, 1024).ratio) + " |a-2/3|=" +
                 format_double(std::abs(small - 2.0 / 3.0)) + " |aM/3N-1|=" + format_double(std::abs(large * 256 / 3 - 1));
    }
  }

  {
    Outcome& o = results[3];
    for (const auto& [mn, runs] : grid) {
      const std::uint64_t lbl = runs.at("lbl_memory_optimal_swapped").makespan;
      for (const char* fused : {"fuse_q_qkt", "fuse_qkt_qktv"}) {
        if (runs.at(fused).makespan != lbl) {
          o.fail("M=" + std::to_string(mn.first) + " N=" + std::to_string(mn.second) + " " + fused + " " +
                 std::to_string(runs.at(fused).makespan) + " vs " + std::to_string(lbl));
        }
      }
    }
    if (o.pass) o.detail = "fused == lbl_memory_optimal_swapped on " + std::to_string(grid.size()) + " points";
  }

  {
    Outcome& o = results[4];
    const auto t0 = Clock::now();
    std::size_t cases = 0;
    for (std::size_t m : {4, 8, 16}) {
      for (std::size_t n : {4, 8, 16}) {
        const LayerGraph g = build_attention_head(m, n);
        for (std::size_t tile : {1, 2, 0}) {
          const NodeGraph ng = fine_grained_graph(g, uniform_split(g, tile));
          ++cases;
          if (generate_dependencies(ng.nodes(), g) != brute_force_dependencies(ng.nodes(), g)) {
            o.fail("M=" + std::to_string(m) + " N=" + std::to_string(n) + " tile=" + std::to_string(tile));
          }
        }
      }
    }
    const double elapsed = seconds_since(t0);
    if (elapsed >= 30) o.fail("took " + secs(elapsed));
    if (o.pass) o.detail = std::to_string(cases) + " cases, " + secs(elapsed);
  }

  {
    Outcome& o = results[5];
    const GAConfig ga = cli::default_multihead_ga();
    const MultiheadReport r =
        multihead_check(128, 64, 4, builtin_platform("quad64x64"), single, ga);
    if (r.evaluations < 500) o.fail("budget " + std::to_string(r.evaluations));
    for (const Check* c : r.checks.failures()) o.fail(c->name);
    if (o.pass) {
      o.detail = "seed " + std::to_string(ga.seed) + ", " + std::to_string(r.evaluations) + " evaluations, makespan " +
                 std::to_string(r.multi_makespan) + ", per-core alpha " + format_double(r.core_alpha);
    }
  }

  {
    Outcome& o = results[6];
    const ScalingReport r = seqlen_scaling_check(builtin_platform("gap8like"));
    if (std::abs(r.ratio - kEstimateRatio) > 0.10 * kEstimateRatio) o.fail("estimate band");
    if (std::abs(r.ratio - r.mac_ratio) > 0.10 * r.mac_ratio) o.fail("MAC band");
    for (double mpc : {r.mac_per_cycle1, r.mac_per_cycle2}) {
      if (mpc < 2.0 || mpc > 6.0) o.fail("MAC/cycle " + format_double(mpc));
    }
    o.detail = (o.pass ? "" : o.detail + "; ") + "ratio " + format_double(r.ratio) + ", MAC/cycle " +
               format_double(r.mac_per_cycle1) + " / " + format_double(r.mac_per_cycle2);
  }

  {
    Outcome& o = results[7];
    std::vector<std::pair<std::string, cli::RunConfig>> configs;
    cli::RunConfig quad;
    quad.workload = "mhsa_128x64_4";
    quad.hw = "quad64x64";
    quad.template_name = "fuse_qkt_qktv";
    quad.ga.seed = 1;
    quad.emit = {cli::artifact_names().begin(), cli::artifact_names().end()};
    configs.emplace_back("quad", quad);
    cli::RunConfig gap;
    gap.workload = "head_81x32";
    gap.hw = "gap8like";
    gap.mode = ScheduleMode::LayerFusedAuto;
    gap.use_ga = true;
    gap.ga.seed = 1;
    gap.emit = quad.emit;
    configs.emplace_back("gap8", gap);
    std::size_t compared = 0;
    for (auto& [name, cfg] : configs) {
      std::ostringstream sink;
      for (const char* run : {"a", "b"}) {
        cfg.out_dir = fs::path(out_dir) / ("determinism_" + name + "_" + run);
        fs::remove_all(cfg.out_dir);
        if (cli::run_explore(cfg, sink, sink) != 0) o.fail(name + " run " + run + " failed");
      }
      const fs::path a = fs::path(out_dir) / ("determinism_" + name + "_a");
      const fs::path b = fs::path(out_dir) / ("determinism_" + name + "_b");
      for (const auto& e : fs::directory_iterator(a)) {
        ++compared;
        if (slurp(e.path()) != slurp(b / e.path().filename())) o.fail(name + " " + e.path().filename().string());
      }
    }
    if (o.pass) o.detail = std::to_string(compared) + " files byte-identical";
  }

  {
    Outcome& o = results[8];
    std::size_t traces = 0;
    for (const auto& [mn, runs] : grid) {
      const std::uint64_t words = static_cast<std::uint64_t>(mn.first) * mn.second;
      for (const auto& [name, r] : runs) {
        ++traces;
        if (r.first != words || r.last != words) {
          o.fail("M=" + std::to_string(mn.first) + " N=" + std::to_string(mn.second) + " " + name);
        }
      }
    }
    for (std::size_t m : sizes) {
      for (std::size_t n : sizes) {
        for (auto mode : {ScheduleMode::LayerByLayer, ScheduleMode::LayerFusedAuto}) {
          for (auto pr : {PriorityObjective::Latency, PriorityObjective::Memory}) {
            SchedulePolicy p;
            p.mode = mode;
            p.priority = pr;
            const ScheduleResult r = run_schedule(build_attention_head(m, n), single, p).result;
            ++traces;
            if (r.trace.initial() != m * n || r.trace.final_words() != m * n) o.fail(describe(p));
          }
        }
      }
    }
    if (o.pass) o.detail = std::to_string(traces) + " traces";
  }

  static const std::map<int, const char*> titles{
      {1, "closed-form vs simulation peaks"},
      {2, "alpha values and limits"},
      {3, "latency invariance"},
      {4, "dependency oracle"},
      {5, "multi-core neutrality"},
      {6, "sequence-length scaling"},
      {7, "determinism"},
      {8, "trace endpoints"},
  };
  std::ostringstream report;
  bool all = true;
  for (const auto& [id, o] : results) {
    report << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << titles.at(id) << " (" << o.detail
           << ")\n";
    all = all && o.pass;
  }
  std::cout << report.str();
  std::ofstream(fs::path(out_dir) / "acceptance.txt") << report.str();
  return all ? 0 : 1;
}
