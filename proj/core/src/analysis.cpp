#include "attnsched/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "attnsched/scheduler.hpp"

namespace attnsched {

std::uint64_t closed_form_lbl(std::size_t m, std::size_t n) {
  const std::uint64_t mm = m, nn = n;
  return mm <= nn ? 3 * mm * nn : 2 * mm * nn + mm * mm;
}

std::uint64_t closed_form_lf(std::size_t m, std::size_t n, std::string_view tmpl) {
  const std::uint64_t mm = m, nn = n;
  if (tmpl == "fuse_q_qkt") return 2 * mm * nn + mm * mm;
  if (tmpl == "fuse_qkt_qktv") return 3 * mm * nn;
  throw std::invalid_argument("no closed form for template '" + std::string(tmpl) +
                              "' (fuse_q_qkt, fuse_qkt_qktv)");
}

const std::vector<std::string>& fused_templates() {
  static const std::vector<std::string> names{"fuse_q_qkt", "fuse_qkt_qktv"};
  return names;
}

Alpha alpha(std::size_t m, std::size_t n) {
  const auto lbl = static_cast<double>(closed_form_lbl(m, n));
  Alpha best{2.0, ""};
  for (const auto& t : fused_templates()) {
    const double r = static_cast<double>(closed_form_lf(m, n, t)) / lbl;
    if (r < best.ratio) best = {r, t};
  }
  return best;
}

double alpha_ratio(double r) {
  if (r < 1.0) return (2.0 + r) / 3.0;
  if (r > 1.0) return 3.0 / (2.0 + r);
  return 1.0;
}

FootprintReport footprint_report(std::size_t m, std::size_t n) {
  FootprintReport rep;
  rep.m = m;
  rep.n = n;
  rep.a_lbl = closed_form_lbl(m, n);
  for (const auto& t : fused_templates()) rep.a_lf[t] = closed_form_lf(m, n, t);
  const Alpha a = alpha(m, n);
  rep.alpha = a.ratio;
  rep.best_template = a.best_template;
  return rep;
}

bool LimitReport::pass() const {
  if (!monotone || small.empty() || large.empty()) return false;
  return small.back().error < tolerance && large.back().error < tolerance;
}

LimitReport alpha_limits(std::size_t octaves, double tolerance) {
  LimitReport rep;
  rep.tolerance = tolerance;
  for (std::size_t k = 1; k <= octaves; ++k) {
    const std::size_t big = std::size_t{1} << k;
    const double a_small = alpha(1, big).ratio;
    rep.small.push_back({1.0 / static_cast<double>(big), a_small, std::abs(a_small - 2.0 / 3.0)});
    const double a_large = alpha(big, 1).ratio;
    rep.large.push_back({static_cast<double>(big), a_large,
                         std::abs(a_large * static_cast<double>(big) / 3.0 - 1.0)});
  }
  for (std::size_t i = 1; i < octaves; ++i) {
    if (rep.small[i].error >= rep.small[i - 1].error || rep.large[i].error >= rep.large[i - 1].error) {
      rep.monotone = false;
    }
  }
  return rep;
}

bool VerifyReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::vector<const Check*> VerifyReport::failures() const {
  std::vector<const Check*> out;
  for (const auto& c : checks) {
    if (!c.pass) out.push_back(&c);
  }
  return out;
}

std::string VerifyReport::text() const {
  std::ostringstream os;
  for (const auto& c : checks) {
    os << (c.pass ? "ok   " : "FAIL ") << c.name << " (expected " << format_double(c.expected)
       << ", got " << format_double(c.actual) << ")\n";
  }
  return os.str();
}

void VerifyReport::append(const VerifyReport& other) {
  checks.insert(checks.end(), other.checks.begin(), other.checks.end());
}

namespace {

std::string point(std::size_t m, std::size_t n) {
  return "M=" + std::to_string(m) + " N=" + std::to_string(n);
}

std::string lbl_formula(std::size_t m, std::size_t n) { return m <= n ? "3MN" : "2MN+M^2"; }

std::string lf_formula(std::string_view t) { return t == "fuse_q_qkt" ? "2MN+M^2" : "3MN"; }

void expect_eq(VerifyReport& rep, std::string name, double expected, double actual) {
  rep.checks.push_back({std::move(name), expected, actual, expected == actual});
}

void expect_le(VerifyReport& rep, std::string name, double bound, double actual) {
  rep.checks.push_back({std::move(name), bound, actual, actual <= bound});
}

void expect_band(VerifyReport& rep, std::string name, double centre, double tolerance, double actual) {
  rep.checks.push_back({std::move(name), centre, actual, std::abs(actual / centre - 1.0) <= tolerance});
}

}  // namespace

VerifyReport verify_against_simulation(std::size_t m, std::size_t n, const HardwareSpec& hw,
                                       const ClosedForms& forms) {
  const LayerGraph g = build_attention_head(m, n);
  const std::string at = point(m, n);
  const double mn = static_cast<double>(m) * static_cast<double>(n);
  std::map<std::string, ScheduleResult> runs;
  for (const auto& name : template_names()) {
    SchedulePolicy p;
    p.mode = ScheduleMode::Template;
    p.template_name = name;
    runs.emplace(name, run_schedule(g, hw, p).result);
  }

  VerifyReport rep;
  const double lbl = static_cast<double>(forms.lbl(m, n));
  for (const char* name : {"lbl_memory_optimal", "lbl_memory_optimal_swapped"}) {
    expect_eq(rep, at + " " + name + ": peak == " + lbl_formula(m, n), lbl,
              static_cast<double>(runs.at(name).peak));
  }
  const auto lbl_makespan = static_cast<double>(runs.at("lbl_memory_optimal_swapped").makespan);
  double best_lf = 0.0;
  for (const auto& t : fused_templates()) {
    const double lf = static_cast<double>(forms.lf(m, n, t));
    best_lf = best_lf == 0.0 ? lf : std::min(best_lf, lf);
    expect_eq(rep, at + " " + t + ": peak == " + lf_formula(t), lf, static_cast<double>(runs.at(t).peak));
    expect_eq(rep, at + " " + t + ": makespan == lbl_memory_optimal_swapped makespan", lbl_makespan,
              static_cast<double>(runs.at(t).makespan));
  }
  expect_le(rep, at + " fuse_q_qkt_qktv: peak <= 3MN", 3.0 * mn,
            static_cast<double>(runs.at("fuse_q_qkt_qktv").peak));

  double sim_best = 0.0;
  for (const auto& t : fused_templates()) {
    const auto p = static_cast<double>(runs.at(t).peak);
    sim_best = sim_best == 0.0 ? p : std::min(sim_best, p);
  }
  const auto sim_alpha = sim_best / static_cast<double>(runs.at("lbl_memory_optimal").peak);
  rep.checks.push_back({at + " alpha: simulated == closed form", best_lf / lbl, sim_alpha,
                        std::abs(sim_alpha - best_lf / lbl) < 1e-12});

  for (const auto& name : template_names()) {
    const MemoryTrace& tr = runs.at(name).trace;
    expect_eq(rep, at + " " + name + ": trace starts at MN", mn, static_cast<double>(tr.initial()));
    expect_eq(rep, at + " " + name + ": trace ends at MN", mn, static_cast<double>(tr.final_words()));
  }
  return rep;
}

VerifyReport verify_grid(const std::vector<std::size_t>& sizes, const HardwareSpec& hw,
                         const ClosedForms& forms, std::size_t threads) {
  std::vector<std::pair<std::size_t, std::size_t>> points;
  for (auto m : sizes) {
    for (auto n : sizes) points.emplace_back(m, n);
  }
  std::vector<VerifyReport> parts(points.size());
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&](std::size_t first, std::size_t step) {
    for (std::size_t i = first; i < points.size(); i += step) {
      try {
        parts[i] = verify_against_simulation(points[i].first, points[i].second, hw, forms);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t k = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(points.size(), 1));
  if (k == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < k; ++w) workers.emplace_back(work, w, k);
    for (auto& t : workers) t.join();
  }
  if (error) std::rethrow_exception(error);
  VerifyReport rep;
  for (const auto& p : parts) rep.append(p);
  return rep;
}

ScalingReport seqlen_scaling_check(const HardwareSpec& hw, std::size_t n, std::size_t l1, std::size_t l2,
                                   const GAConfig& ga, double tolerance, double mpc_lo, double mpc_hi) {
  SchedulePolicy policy;
  policy.mode = ScheduleMode::LayerFusedAuto;
  policy.priority = PriorityObjective::Latency;
  auto predict = [&](std::size_t l, std::uint64_t& macs) {
    const LayerGraph g = build_attention_head(l, n);
    macs = g.mac_count();
    const NodeGraph ng = fine_grained_graph(g, mapping_split(g, hw));
    const CostModel costs(ng, hw);
    GAConfig cfg = ga;
    cfg.objective = Objective::Latency;
    return genetic_search(ng, costs, policy, cfg).metrics.makespan;
  };

  ScalingReport rep;
  rep.n = n;
  rep.l1 = l1;
  rep.l2 = l2;
  rep.makespan1 = predict(l1, rep.macs1);
  rep.makespan2 = predict(l2, rep.macs2);
  rep.ratio = static_cast<double>(rep.makespan2) / static_cast<double>(rep.makespan1);
  rep.mac_ratio = static_cast<double>(rep.macs2) / static_cast<double>(rep.macs1);
  rep.mac_per_cycle1 = static_cast<double>(rep.macs1) / static_cast<double>(rep.makespan1);
  rep.mac_per_cycle2 = static_cast<double>(rep.macs2) / static_cast<double>(rep.makespan2);

  const std::string lens = "L=" + std::to_string(l2) + "/L=" + std::to_string(l1) + " makespan ratio";
  const std::string band = " within " + format_double(tolerance * 100) + "% of ";
  expect_band(rep.checks, lens + band + "estimated ratio", kEstimateRatio, tolerance, rep.ratio);
  expect_band(rep.checks, lens + band + "measured ratio", kMeasuredRatio, tolerance, rep.ratio);
  expect_band(rep.checks, lens + band + "MAC ratio", rep.mac_ratio, tolerance, rep.ratio);
  for (auto [l, mpc] : {std::pair{l1, rep.mac_per_cycle1}, std::pair{l2, rep.mac_per_cycle2}}) {
    rep.checks.checks.push_back({"L=" + std::to_string(l) + " MAC/cycle in [" + format_double(mpc_lo) + ", " +
                                     format_double(mpc_hi) + "]",
                                 kMeasuredMacPerCycle, mpc, mpc >= mpc_lo && mpc <= mpc_hi});
  }
  return rep;
}

MultiheadReport multihead_check(std::size_t m, std::size_t n, std::size_t heads, const HardwareSpec& multi,
                                const HardwareSpec& single, const GAConfig& ga) {
  MultiheadReport rep;
  rep.m = m;
  rep.n = n;
  rep.heads = heads;
  rep.lbl_template = "lbl_memory_optimal_swapped";
  rep.lf_template = alpha(m, n).best_template;
  rep.single_alpha = alpha(m, n).ratio;

  const LayerGraph one = build_attention_head(m, n);
  const LayerGraph many = build_mhsa(m, n, heads);
  const std::string at = point(m, n) + " heads=" + std::to_string(heads) + " ";

  auto explore = [&](const std::string& name, std::uint64_t& single_mk, std::uint64_t& core_peak,
                     Allocation& alloc) {
    SchedulePolicy p;
    p.mode = ScheduleMode::Template;
    p.template_name = name;
    single_mk = run_schedule(one, single, p).result.makespan;
    const ScheduleTemplate t = apply_template(name, many);
    const NodeGraph ng = fine_grained_graph(many, t.split);
    const CostModel costs(ng, multi);
    GAConfig cfg = ga;
    cfg.objective = Objective::Latency;
    const SearchResult found = genetic_search(ng, costs, p, cfg, &t);
    rep.evaluations = found.evaluations;
    alloc = found.allocation;
    const ScheduleResult r = schedule(ng, costs, alloc, p, &t);
    core_peak = 0;
    for (const auto& tr : r.core_traces) core_peak = std::max(core_peak, tr.peak());
    return r.makespan;
  };

  std::uint64_t lbl_single = 0;
  Allocation lbl_alloc;
  const std::uint64_t lbl_multi = explore(rep.lbl_template, lbl_single, rep.lbl_core_peak, lbl_alloc);
  rep.multi_makespan = explore(rep.lf_template, rep.single_makespan, rep.lf_core_peak, rep.lf_allocation);
  rep.core_alpha = static_cast<double>(rep.lf_core_peak) / static_cast<double>(rep.lbl_core_peak);

  expect_eq(rep.checks, at + rep.lf_template + ": makespan == single-head makespan",
            static_cast<double>(rep.single_makespan), static_cast<double>(rep.multi_makespan));
  expect_eq(rep.checks, at + rep.lbl_template + ": makespan == single-head makespan",
            static_cast<double>(lbl_single), static_cast<double>(lbl_multi));
  expect_eq(rep.checks, at + rep.lf_template + ": per-core peak == single-head peak",
            static_cast<double>(closed_form_lf(m, n, rep.lf_template)), static_cast<double>(rep.lf_core_peak));
  expect_eq(rep.checks, at + rep.lbl_template + ": per-core peak == single-head peak",
            static_cast<double>(closed_form_lbl(m, n)), static_cast<double>(rep.lbl_core_peak));
  rep.checks.checks.push_back({at + "per-core alpha == single-head alpha", rep.single_alpha, rep.core_alpha,
                               std::abs(rep.core_alpha - rep.single_alpha) < 1e-12});
  return rep;
}

std::string report_csv(const std::vector<FootprintReport>& rows) {
  std::ostringstream os;
  os << "M,N,A_LBL";
  for (const auto& t : fused_templates()) os << ",A_LF_" << t;
  os << ",alpha,template\n";
  for (const auto& r : rows) {
    os << r.m << "," << r.n << "," << r.a_lbl;
    for (const auto& t : fused_templates()) os << "," << r.a_lf.at(t);
    os << "," << format_double(r.alpha) << "," << r.best_template << "\n";
  }
  return os.str();
}

namespace {

double parse_bound(std::string_view s) {
  auto number = [&](std::string_view t) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || end != t.data() + t.size() || t.empty()) {
      throw std::invalid_argument("bad ratio '" + std::string(s) + "'");
    }
    return v;
  };
  const auto slash = s.find('/');
  const double v = slash == std::string_view::npos ? number(s) : number(s.substr(0, slash)) / number(s.substr(slash + 1));
  if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("ratio must be positive: '" + std::string(s) + "'");
  return v;
}

}  // namespace

std::pair<double, double> parse_ratio_range(std::string_view text) {
  const auto dots = text.find("..");
  if (dots == std::string_view::npos) {
    throw std::invalid_argument("sweep must look like lo..hi, e.g. 1/64..64; got '" + std::string(text) + "'");
  }
  const double lo = parse_bound(text.substr(0, dots));
  const double hi = parse_bound(text.substr(dots + 2));
  if (lo > hi) throw std::invalid_argument("sweep bounds reversed: '" + std::string(text) + "'");
  return {lo, hi};
}

std::vector<std::pair<std::size_t, std::size_t>> sweep_points(double lo, double hi, std::size_t base) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const int first = static_cast<int>(std::ceil(std::log2(lo) - 1e-9));
  const int last = static_cast<int>(std::floor(std::log2(hi) + 1e-9));
  for (int k = first; k <= last; ++k) {
    const std::size_t scale = std::size_t{1} << std::abs(k);
    out.emplace_back(k > 0 ? base * scale : base, k < 0 ? base * scale : base);
  }
  return out;
}

std::string alpha_svg(double lo, double hi, std::size_t points_per_octave) {
  constexpr double kLeft = 60, kTop = 30, kWidth = 640, kHeight = 360;
  const double x0 = std::log2(lo), x1 = std::log2(hi);
  const double span = std::max(x1 - x0, 1e-9);
  const std::size_t steps = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(span * static_cast<double>(std::max<std::size_t>(points_per_octave, 1)))));
  auto px = [&](double lx) { return kLeft + kWidth * (lx - x0) / span; };
  auto py = [&](double a) { return kTop + kHeight * (1.0 - a); };

  auto curve = [&](auto&& f) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    for (std::size_t i = 0; i <= steps; ++i) {
      const double lx = x0 + span * static_cast<double>(i) / static_cast<double>(steps);
      os << (i ? " " : "") << px(lx) << "," << py(f(std::exp2(lx)));
    }
    return os.str();
  };

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kLeft + kWidth + 40 << "\" height=\""
     << kTop + kHeight + 50 << "\" font-family=\"monospace\" font-size=\"11\">\n";
  os << "<text x=\"" << kLeft << "\" y=\"18\">alpha = A_LF / A_LBL vs M/N</text>\n";
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" fill=\"none\" stroke=\"#888\"/>\n";
  for (double a : {0.0, 0.25, 0.5, 2.0 / 3.0, 0.75, 1.0}) {
    os << "<line x1=\"" << kLeft << "\" y1=\"" << py(a) << "\" x2=\"" << kLeft + kWidth << "\" y2=\"" << py(a)
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"8\" y=\"" << py(a) + 4 << "\">" << std::setprecision(3) << a << std::setprecision(2)
       << "</text>\n";
  }
  for (int k = static_cast<int>(std::ceil(x0)); k <= static_cast<int>(std::floor(x1)); ++k) {
    const double x = px(k);
    os << "<line x1=\"" << x << "\" y1=\"" << kTop << "\" x2=\"" << x << "\" y2=\"" << kTop + kHeight
       << "\" stroke=\"#eee\"/>\n";
    os << "<text x=\"" << x - 12 << "\" y=\"" << kTop + kHeight + 16 << "\">"
       << (k < 0 ? "1/" + std::to_string(1 << -k) : std::to_string(1 << k)) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + kWidth / 2 - 20 << "\" y=\"" << kTop + kHeight + 36 << "\">M/N</text>\n";
  os << "<polyline fill=\"none\" stroke=\"#4e79a7\" stroke-dasharray=\"4 3\" points=\""
     << curve([](double r) { return r < 1.0 ? (2.0 + r) / 3.0 : 1.0; }) << "\"><title>fuse_q_qkt</title></polyline>\n";
  os << "<polyline fill=\"none\" stroke=\"#f28e2b\" stroke-dasharray=\"4 3\" points=\""
     << curve([](double r) { return r > 1.0 ? 3.0 / (2.0 + r) : 1.0; }) << "\"><title>fuse_qkt_qktv</title></polyline>\n";
  os << "<polyline fill=\"none\" stroke=\"#222\" stroke-width=\"2\" points=\"" << curve(alpha_ratio)
     << "\"><title>alpha</title></polyline>\n";
  os << "</svg>\n";
  return os.str();
}

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

}  // namespace attnsched
