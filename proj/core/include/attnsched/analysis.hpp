#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "attnsched/allocator.hpp"
#include "attnsched/hwmodel.hpp"

namespace attnsched {

/// Peak active feature words of the memory-optimal layer-by-layer schedule:
/// 3MN when M <= N, else 2MN + M^2.
std::uint64_t closed_form_lbl(std::size_t m, std::size_t n);

/// fuse_q_qkt: 2MN + M^2; fuse_qkt_qktv: 3MN. Throws std::invalid_argument
/// for any other template.
std::uint64_t closed_form_lf(std::size_t m, std::size_t n, std::string_view tmpl);

/// Fused templates with a closed form, in report column order.
const std::vector<std::string>& fused_templates();

struct Alpha {
  double ratio = 1.0;
  std::string best_template;
};

/// Best fused footprint over the layer-by-layer one. Ties (M = N) report
/// fuse_q_qkt.
Alpha alpha(std::size_t m, std::size_t n);
/// Same as alpha() for a real-valued M/N.
double alpha_ratio(double m_over_n);

struct FootprintReport {
  std::size_t m = 0;
  std::size_t n = 0;
  std::uint64_t a_lbl = 0;
  std::map<std::string, std::uint64_t> a_lf;
  double alpha = 1.0;
  std::string best_template;
};

FootprintReport footprint_report(std::size_t m, std::size_t n);

struct LimitPoint {
  double m_over_n = 1.0;
  double alpha = 1.0;
  double error = 0.0;  // distance to the limit
};

struct LimitReport {
  double tolerance = 0.0;
  std::vector<LimitPoint> small;  // M/N = 2^-1 .. 2^-octaves, limit 2/3
  std::vector<LimitPoint> large;  // M/N = 2^1 .. 2^octaves, alpha*M/(3N) -> 1
  bool monotone = true;           // errors shrink at every octave
  bool pass() const;
};

LimitReport alpha_limits(std::size_t octaves = 8, double tolerance = 0.01);

/// Closed forms used by verification; replaceable to inject faults.
struct ClosedForms {
  std::function<std::uint64_t(std::size_t, std::size_t)> lbl = closed_form_lbl;
  std::function<std::uint64_t(std::size_t, std::size_t, std::string_view)> lf = closed_form_lf;
};

struct Check {
  std::string name;      // "M=64 N=256 fuse_q_qkt: peak == 2MN+M^2"
  double expected = 0.0;
  double actual = 0.0;
  bool pass = false;
};

struct VerifyReport {
  std::vector<Check> checks;

  bool ok() const;
  std::vector<const Check*> failures() const;
  /// One line per check, failures marked.
  std::string text() const;
  void append(const VerifyReport& other);
};

/// Simulates every template at (M, N) on `hw` and compares peaks with the
/// closed forms, fused makespans with the layer-by-layer one and trace
/// endpoints with MN.
VerifyReport verify_against_simulation(std::size_t m, std::size_t n, const HardwareSpec& hw,
                                       const ClosedForms& forms = {});

/// verify_against_simulation over every (M, N) of `sizes` squared.
VerifyReport verify_grid(const std::vector<std::size_t>& sizes, const HardwareSpec& hw,
                         const ClosedForms& forms = {}, std::size_t threads = 1);

inline constexpr double kEstimateRatio = 3.540 / 1.692;
inline constexpr double kMeasuredRatio = 3.905 / 1.836;
inline constexpr double kMeasuredMacPerCycle = 3.2;

struct ScalingReport {
  std::size_t n = 0;
  std::size_t l1 = 0;
  std::size_t l2 = 0;
  std::uint64_t makespan1 = 0;
  std::uint64_t makespan2 = 0;
  std::uint64_t macs1 = 0;
  std::uint64_t macs2 = 0;
  double ratio = 0.0;
  double mac_ratio = 0.0;
  double mac_per_cycle1 = 0.0;
  double mac_per_cycle2 = 0.0;
  VerifyReport checks;
};

/// Single head of L x N at both lengths, GA allocation under the fused-auto
/// latency policy. Ratio bands are relative (+-tolerance) around the
/// estimated, measured and MAC-count ratios; MAC/cycle must lie in
/// [mpc_lo, mpc_hi].
ScalingReport seqlen_scaling_check(const HardwareSpec& hw, std::size_t n = 32, std::size_t l1 = 81,
                                   std::size_t l2 = 128, const GAConfig& ga = {},
                                   double tolerance = 0.10, double mpc_lo = 2.0, double mpc_hi = 6.0);

struct MultiheadReport {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t heads = 0;
  std::string lbl_template;
  std::string lf_template;
  std::uint64_t single_makespan = 0;   // fused template, one head, one core
  std::uint64_t multi_makespan = 0;    // fused template, GA allocation
  std::uint64_t lbl_core_peak = 0;     // largest per-core peak
  std::uint64_t lf_core_peak = 0;
  double core_alpha = 0.0;
  double single_alpha = 0.0;
  std::size_t evaluations = 0;         // per GA run
  Allocation lf_allocation;
  VerifyReport checks;
};

/// `heads` heads of M x N on `multi`, allocated by the GA for both the
/// layer-by-layer and best fused template, against one head on `single`.
MultiheadReport multihead_check(std::size_t m, std::size_t n, std::size_t heads,
                                const HardwareSpec& multi, const HardwareSpec& single,
                                const GAConfig& ga = {});

/// "M,N,A_LBL,A_LF_fuse_q_qkt,A_LF_fuse_qkt_qktv,alpha,template".
std::string report_csv(const std::vector<FootprintReport>& rows);

/// "lo..hi" with each bound an integer, decimal or "a/b". Throws
/// std::invalid_argument on malformed text, non-positive bounds or lo > hi.
std::pair<double, double> parse_ratio_range(std::string_view text);

/// (M, N) pairs for every power of two M/N in [lo, hi]; the smaller side is
/// `base`.
std::vector<std::pair<std::size_t, std::size_t>> sweep_points(double lo, double hi, std::size_t base = 64);

/// Alpha and both template curves against log2(M/N).
std::string alpha_svg(double lo, double hi, std::size_t points_per_octave = 16);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace attnsched
