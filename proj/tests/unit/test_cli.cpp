#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "attnsched/errors.hpp"
#include "cli.hpp"

using namespace attnsched;
using namespace attnsched::cli;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(testing::TempDir()) / ("attnsched_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t csv_peak(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  std::uint64_t peak = 0;
  while (std::getline(in, line)) peak = std::max<std::uint64_t>(peak, std::stoull(line.substr(line.find(',') + 1)));
  return peak;
}

int invoke(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  args.insert(args.begin(), "attnsched");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int rc = main_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return rc;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) setenv(kOutDirEnv, value, 1);
    else unsetenv(kOutDirEnv);
  }
  ~EnvGuard() { unsetenv(kOutDirEnv); }
};

}  // namespace

TEST(Explore, MemoryPolicyPicksFusedTemplate) {
  const fs::path dir = fresh_dir("explore_mem");
  std::string out;
  ASSERT_EQ(invoke({"explore", "--workload", "head_128x1024", "--hw", "single64x64", "--policy", "memory", "--out",
                 dir.string()},
                &out),
            0);
  EXPECT_EQ(csv_peak(dir / "memtrace.csv"), 278528u);
  EXPECT_NE(slurp(dir / "report.csv").find("278528"), std::string::npos);
  EXPECT_NE(out.find("fuse_q_qkt"), std::string::npos);
}

TEST(Explore, QuadFourHeadsInParallel) {
  const fs::path dir = fresh_dir("explore_quad");
  ASSERT_EQ(invoke({"explore", "--workload", "head_64x64", "--heads", "4", "--hw", "quad64x64", "--template",
                 "lbl_memory_optimal_swapped", "--population", "24", "--generations", "24", "--emit", "all", "--out",
                 dir.string()}),
            0);
  const std::string json = slurp(dir / "schedule.json");
  for (const char* core : {"core0", "core1", "core2", "core3"}) {
    EXPECT_NE(json.find(std::string("\"resource\": \"") + core + "\""), std::string::npos) << core;
    EXPECT_TRUE(fs::exists(dir / (std::string("memtrace_") + core + ".csv"))) << core;
  }
  EXPECT_NE(json.find("\"makespan\": 320"), std::string::npos);
  for (const char* f : {"gantt.svg", "gantt.txt", "report.csv", "alpha.svg", "ga_log.csv", "memtrace.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
}

TEST(Explore, DeterministicOutputs) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  for (const fs::path& d : {a, b}) {
    ASSERT_EQ(invoke({"explore", "--workload", "mhsa_32x32_2", "--hw", "quad64x64", "--mode", "auto", "--seed", "5",
                   "--population", "12", "--generations", "6", "--emit", "all", "--out", d.string()}),
              0);
  }
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(b / e.path().filename())) << e.path().filename();
  }
  EXPECT_GE(files, 7u);
}

TEST(Explore, ConfigFile) {
  const fs::path dir = fresh_dir("explore_cfg");
  fs::create_directories(dir);
  const fs::path cfg = dir / "run.json";
  std::ofstream(cfg) << R"({"workload": "head_64x256", "mode": "template", "template": "fuse_q_qkt",
                           "emit": ["memtrace_csv"], "out": ")"
                     << (dir / "o").string() << "\"}";
  EXPECT_EQ(invoke({"explore", "--config", cfg.string()}), 0);
  EXPECT_EQ(csv_peak(dir / "o" / "memtrace.csv"), 36864u);
  EXPECT_FALSE(fs::exists(dir / "o" / "schedule.json"));
}

TEST(Explore, ShippedRunConfigsParse) {
  for (const auto& e : fs::directory_iterator(fs::path(ATTNSCHED_CONFIG_DIR) / "runs")) {
    EXPECT_NO_THROW(load_run_config(e.path().string()).validate()) << e.path();
  }
}

TEST(Explore, ConfigErrorsAreActionable) {
  EXPECT_THROW(parse_run_config(R"({"workload": "head_8x8", "colour": "red"})"), ConfigError);
  try {
    parse_run_config("{\n  \"ga\": {\n    \"population\": \"many\"\n  }\n}");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.field(), "/ga/population");
  }
  EXPECT_THROW(parse_run_config(R"({"mode": "fastest"})"), ConfigError);
  RunConfig bad;
  bad.emit.insert("pdf");
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  std::string err;
  EXPECT_EQ(invoke({"explore", "--hw", "tpu", "--out", fresh_dir("bad_hw").string()}, nullptr, &err), 2);
  EXPECT_NE(err.find("tpu"), std::string::npos);
  EXPECT_NE(invoke({"explore", "--mode", "lbl", "--template", "fuse_q_qkt"}), 0);
  EXPECT_NE(invoke({"frobnicate"}), 0);
}

TEST(OutDir, Precedence) {
  {
    EnvGuard env(nullptr);
    EXPECT_EQ(resolve_out_dir(std::nullopt, "cfg"), fs::path("cfg"));
    EXPECT_EQ(resolve_out_dir(std::string("flag"), "cfg"), fs::path("flag"));
  }
  {
    EnvGuard env("from_env");
    EXPECT_EQ(resolve_out_dir(std::nullopt, "cfg"), fs::path("from_env"));
    EXPECT_EQ(resolve_out_dir(std::string("flag"), "cfg"), fs::path("flag"));
  }
}

TEST(OutDir, EnvironmentOverridesDefault) {
  const fs::path dir = fresh_dir("env_out");
  EnvGuard env(dir.string().c_str());
  ASSERT_EQ(invoke({"alpha", "--sweep", "1..4"}), 0);
  EXPECT_TRUE(fs::exists(dir / "alpha.csv"));
}

TEST(Alpha, SweepCsvAndSvg) {
  const fs::path dir = fresh_dir("alpha");
  ASSERT_EQ(invoke({"alpha", "--sweep", "1/64..64", "--out", dir.string()}), 0);
  const std::string csv = slurp(dir / "alpha.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 14);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "M,N,A_LBL,A_LF_fuse_q_qkt,A_LF_fuse_qkt_qktv,alpha,template");
  EXPECT_NE(csv.find("64,64,12288,12288,12288,1,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "alpha.svg"));
  EXPECT_NE(invoke({"alpha", "--sweep", "64..1", "--out", dir.string()}), 0);
}

TEST(ExportPlatforms, MatchShippedFiles) {
  const fs::path dir = fresh_dir("platforms");
  ASSERT_EQ(invoke({"export-platforms", "--out", dir.string()}), 0);
  for (const auto& [name, hw] : builtin_platforms()) {
    const fs::path shipped = fs::path(ATTNSCHED_CONFIG_DIR) / "platforms" / (name + ".json");
    EXPECT_EQ(slurp(dir / (name + ".json")), slurp(shipped)) << name;
  }
}

TEST(Verify, SmallGridPasses) {
  VerifyConfig cfg;
  cfg.sizes = {64, 128};
  cfg.multihead = false;
  cfg.scaling = false;
  cfg.out_dir = fresh_dir("verify_ok");
  std::ostringstream out, err;
  EXPECT_EQ(run_verify(cfg, out, err), 0) << err.str();
  EXPECT_TRUE(fs::exists(cfg.out_dir / "verify.txt"));
  EXPECT_NE(out.str().find("0 failed"), std::string::npos);
}

TEST(Verify, InjectedOffByOneFailsWithName) {
  VerifyConfig cfg;
  cfg.sizes = {64};
  cfg.multihead = false;
  cfg.scaling = false;
  cfg.out_dir = fresh_dir("verify_fault");
  cfg.forms.lbl = [](std::size_t m, std::size_t n) { return closed_form_lbl(m, n) - 1; };
  std::ostringstream out, err;
  EXPECT_EQ(run_verify(cfg, out, err), 1);
  EXPECT_NE(err.str().find("violated: M=64 N=64 lbl_memory_optimal"), std::string::npos) << err.str();
  EXPECT_NE(slurp(cfg.out_dir / "verify.txt").find("FAIL"), std::string::npos);
}

TEST(Modes, Names) {
  for (auto m : {ScheduleMode::LayerByLayer, ScheduleMode::LayerFusedAuto, ScheduleMode::Template}) {
    EXPECT_EQ(mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(mode_from_string("eager"), std::invalid_argument);
  EXPECT_EQ(artifact_names().size(), 6u);
}
