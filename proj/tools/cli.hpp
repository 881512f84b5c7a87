#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "attnsched/allocator.hpp"
#include "attnsched/analysis.hpp"
#include "attnsched/scheduler.hpp"

namespace attnsched::cli {

inline constexpr const char* kOutDirEnv = "ATTNSCHED_OUT_DIR";

/// schedule_json, memtrace_csv, gantt_svg, gantt_ascii, report_csv, alpha_svg.
const std::vector<std::string>& artifact_names();

struct RunConfig {
  std::string workload = "head_128x64";  // file path or head_MxN / mhsa_MxN_h
  std::optional<std::size_t> heads;      // overrides the workload's head count
  std::string hw = "single64x64";        // builtin name or file path
  ScheduleMode mode = ScheduleMode::Template;
  std::string priority = "latency";      // latency | memory | weighted:<lambda>
  std::string template_name = "best";    // Template mode: a name or "best"
  std::string mapping;                   // optional mapping override file
  GAConfig ga;
  std::optional<Objective> objective;    // GA objective; default follows priority
  std::optional<bool> use_ga;            // default: only on multi-core platforms
  std::filesystem::path out_dir = "out";
  std::set<std::string> emit{"schedule_json", "memtrace_csv", "report_csv"};

  /// Throws std::invalid_argument naming the bad field.
  void validate() const;
};

/// JSON run configuration; see README for the format. Unknown keys are
/// rejected. Throws ConfigError with line and field.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});

/// "lbl", "auto" or "template".
ScheduleMode mode_from_string(std::string_view s);
std::string_view to_string(ScheduleMode m);

/// Explicit flag, else the environment variable, else `fallback`.
std::filesystem::path resolve_out_dir(const std::optional<std::string>& flag,
                                      const std::filesystem::path& fallback);

/// Builds, allocates (GA on multi-core), schedules and writes the requested
/// artifacts. Returns 0 on success, 1 when the closed-form check of the run
/// fails, 2 on configuration errors.
int run_explore(const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Population 24 for 24 generations: 600 fitness requests.
GAConfig default_multihead_ga();

struct VerifyConfig {
  std::vector<std::size_t> sizes{64, 128, 256, 512};
  std::string hw = "single64x64";
  bool multihead = true;
  bool scaling = true;
  std::size_t threads = 1;
  GAConfig multihead_ga = default_multihead_ga();
  GAConfig scaling_ga;
  ClosedForms forms;
  std::filesystem::path out_dir = "out";
};

/// Closed forms, alpha values and limits, simulation grid, multi-core and
/// sequence-length checks. Writes verify.txt; 0 when every check passes.
int run_verify(const VerifyConfig& cfg, std::ostream& out, std::ostream& err);

/// alpha.csv and alpha.svg for the sweep "lo..hi".
int run_alpha(std::string_view sweep, const std::filesystem::path& out_dir, std::ostream& out,
              std::ostream& err);

/// One JSON file per builtin platform.
int run_export_platforms(const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err);

/// Full command line (CLI11). Returns the process exit code.
int main_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace attnsched::cli
