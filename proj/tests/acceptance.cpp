// Acceptance suite: one PASS/FAIL line per criterion on the reference configurations.
//
//   acceptance            all criteria
//   acceptance 4 5        selected criteria only
//
// Details go to stderr; the summary lines go to stdout. Exit status is 0 only
// when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "portdec/commands.hpp"
#include "portdec/thresholds.hpp"
#include "portdec/verification.hpp"

using namespace portdec;
namespace th = portdec::thresholds;

namespace {

using clock_type = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

RunConfig reference(const std::string& file) { return load_config(std::string(PORTDEC_CONFIG_DIR) + "/" + file); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + num(v[i]);
  return s + "]";
}

std::ostream& log() { return std::cerr; }

// ------------------------------------------------------------ criterion 1

Outcome eu1_identity() {
  const RunConfig c = reference("power_ou.cfg");
  const Eu1Refinement r =
      eu1_refinement(c.market(), c.utility(), c.x, c.horizon, {256, 512, 1024, 2048}, 20000, c.seeds());
  const double finest_lim = th::eu1_finest_rms_rel * c.x;
  const double min_factor = *std::min_element(r.factors.begin(), r.factors.end());
  const bool slope_ok = r.slope > 0.0;
  const bool factor_ok = min_factor >= th::eu1_decay_factor;
  const bool finest_ok = r.rms.back() <= finest_lim;
  log() << "  eu1 rms " << list(r.rms) << ", factors " << list(r.factors) << ", slope " << num(r.slope) << "\n";
  return {slope_ok && factor_ok && finest_ok,
          "slope " + num(r.slope) + (slope_ok ? " > 0" : " <= 0") + ", min decay factor " + num(min_factor) +
              (factor_ok ? " >= 1.3" : " < 1.3") + ", finest rms " + num(r.rms.back()) +
              (finest_ok ? " <= " : " > ") + num(finest_lim)};
}

// ------------------------------------------------------------ criterion 2

Outcome log_degeneracy_check() {
  bool ok = true;
  std::string detail;
  for (const char* file : {"log_constant.cfg", "power_ou.cfg"}) {
    const RunConfig c = reference(file);
    const MarketModel m = c.market();
    const UtilityModel u = UtilityModel::log();
    const SimulationBundle b = simulate_bundle_under_Q(m, c.grid(), 10000, c.seeds());
    const LogDegeneracy d = log_degeneracy(m, u, c.x, b, c.hedge_spec());
    const DecompositionReport rep = decompose_on(c.x, m, u, b, c.hedge_spec(), c.seeds(), 10000, 10000);
    double hedge_max = 0.0;
    for (const NodeSummary& s : rep.hedge_weight) {
      hedge_max = std::max({hedge_max, std::abs(s.mean), std::abs(s.q05), std::abs(s.q95)});
    }
    const bool this_ok = d.max_abs_F <= th::log_F_abs && d.max_abs_V == 0.0 && d.max_abs_lambda == 0.0 &&
                         d.max_abs_beta == 0.0 && d.max_abs_pi_bar == 0.0 && hedge_max == 0.0 &&
                         d.max_weight_dev <= th::log_weight_abs && d.xstar_exact;
    log() << "  " << c.name << ": |F| " << num(d.max_abs_F) << ", |V| " << num(d.max_abs_V)
          << ", |pi-bar| " << num(d.max_abs_pi_bar) << ", hedge weights " << num(hedge_max) << ", weight dev "
          << num(d.max_weight_dev) << "\n";
    ok = ok && this_ok;
    detail += (detail.empty() ? "" : "; ") + c.name + ": max|F| " + num(d.max_abs_F) +
              ", V=pi-bar=0 " + (d.max_abs_V == 0.0 && d.max_abs_pi_bar == 0.0 && hedge_max == 0.0 ? "yes" : "no") +
              ", weight dev " + num(d.max_weight_dev);
  }
  return {ok, detail};
}

// ------------------------------------------------------------ criterion 3

Outcome budget_martingale() {
  bool ok = true;
  std::string detail;
  for (const char* file : {"power_constant.cfg", "power_ou.cfg"}) {
    const RunConfig c = reference(file);
    const MarketModel m = c.market();
    const TimeGrid g = c.grid();
    const std::vector<StoppingRule> rules{StoppingRule::at(0.5 * c.horizon), StoppingRule::at(c.horizon),
                                          StoppingRule::hitting(default_hitting_level(m, g))};
    const std::vector<BudgetResult> res = budget_study(m, c.utility(), c.x, g, 100000, c.seeds(), rules);
    double worst = 0.0;
    for (const BudgetResult& b : res) {
      log() << "  " << c.name << " " << b.rule.describe() << ": " << num(b.estimate.mean) << " +- "
            << num(b.estimate.se) << " (z " << num(b.z) << ")\n";
      worst = std::max(worst, b.z);
    }
    ok = ok && worst <= th::budget_se;
    detail += (detail.empty() ? "" : "; ") + c.name + " worst z " + num(worst);
  }
  return {ok, detail + " (limit 3)"};
}

// ------------------------------------------------- criteria 4, 5, 6, 9

struct PipelineResults {
  Outcome c4, c5, c6, c9;
};

PipelineResults pipelines(const std::set<int>& want) {
  PipelineResults out;
  const bool need_constant = want.count(4) || want.count(5) || want.count(6);
  const bool need_ou = want.count(4) || want.count(5) || want.count(9);
  bool c4_ok = true, c5_ok = true;
  std::string c4_detail, c5_detail;

  if (need_constant) {
    const RunConfig c = reference("power_constant.cfg");
    const MarketModel m = c.market();
    const UtilityModel u = c.utility();
    const HedgeSpec spec = c.hedge_spec();
    auto b = std::make_unique<SimulationBundle>(simulate_bundle_under_Q(m, c.grid(), c.n_paths, c.seeds()));
    log() << "  constant theta: bundle of " << b->n_paths() << " paths, " << c.n_steps << " steps\n";

    if (want.count(4)) {
      const HedgeResult h = run_hedge(c.x, m, u, *b, spec);
      const BetaOracle o = beta_oracle_constant_crra(h, *b, m, u, c.x);
      const bool ok = h.residual_ratio <= th::residual_ratio_constant && o.rel_rmse <= th::beta_oracle_rel_rmse;
      c4_ok = c4_ok && ok;
      c4_detail += "constant residual ratio " + num(h.residual_ratio) + " (<= 0.05), beta rel rmse " +
                   num(o.rel_rmse) + " (<= 0.05)";
    }
    XStarResult xs;
    if (want.count(6) || want.count(5)) {
      const XStarCheck x = xstar_check(c.x, *b, u);
      xs = x.result;
      const RunConfig lc = reference("log_constant.cfg");
      const SimulationBundle lb = simulate_bundle_under_Q(lc.market(), lc.grid(), 2000, lc.seeds());
      const XStarCheck xl = xstar_check(lc.x, lb, lc.utility());
      out.c6 = {x.pass && xl.pass && xl.result.xstar == lc.x,
                "power x* " + num(x.result.xstar) + " vs x/(1+c) " + num(x.expected) + ", |diff| " +
                    num(x.difference) + " <= " + num(x.tolerance) + "; log x* == x " +
                    (xl.result.xstar == lc.x ? "exactly" : "NOT exactly")};
    }
    if (want.count(5)) {
      const DecompositionReport ref = decompose_on(c.x, m, u, *b, spec, c.seeds(), c.n_paths, c.n_paths, &xs);
      // one dt halving coarser, on the same Brownian paths
      auto coarse = std::make_unique<SimulationBundle>(build_bundle_under_Q(m, coarsen(b->Wtilde, 2)));
      b.reset();
      const DecompositionReport cdt = decompose_on(c.x, m, u, *coarse, spec, c.seeds(), c.n_paths, c.n_paths);
      coarse.reset();
      const bool lim_ok = ref.terminal_relative_rms <= th::terminal_rel_rms_constant;
      const bool dt_ok = ref.terminal_relative_rms < cdt.terminal_relative_rms;
      log() << "  constant theta: terminal rel rms " << num(ref.terminal_relative_rms) << " (dt 2^-9), "
            << num(cdt.terminal_relative_rms) << " (dt 2^-8)\n";
      c5_ok = c5_ok && lim_ok && dt_ok;
      c5_detail += "constant " + num(ref.terminal_relative_rms) + " (<= 0.05), coarser dt " +
                   num(cdt.terminal_relative_rms) + (dt_ok ? " (decreasing)" : " (NOT decreasing)");
    }
  }

  if (need_ou) {
    const RunConfig c = reference("power_ou.cfg");
    const MarketModel m = c.market();
    const UtilityModel u = c.utility();
    const HedgeSpec spec = c.hedge_spec();
    auto b = std::make_unique<SimulationBundle>(simulate_bundle_under_Q(m, c.grid(), c.n_paths, c.seeds()));
    log() << "  OU theta: bundle of " << b->n_paths() << " paths, " << c.n_steps << " steps\n";

    if (want.count(4)) {
      const HedgeResult h = run_hedge(c.x, m, u, *b, spec);
      const bool ok = h.residual_ratio <= th::residual_ratio_ou;
      c4_ok = c4_ok && ok;
      c4_detail += std::string(c4_detail.empty() ? "" : "; ") + "OU residual ratio " + num(h.residual_ratio) +
                   " (<= 0.10)";
    }
    if (want.count(5) || want.count(9)) {
      const XStarResult xs = solve_xstar(c.x, *b, u);
      if (want.count(9)) {
        const TruncationLadder t = truncation_ladder(c.x, m, u, *b, spec, c.seeds(), c.n_paths, c.n_paths,
                                                     {4.0, 8.0, 16.0}, &xs);
        for (std::size_t i = 0; i < t.multiples.size(); ++i) {
          log() << "  truncation " << num(t.multiples[i]) << "x: k_theta " << num(t.k_theta[i]) << ", k_z "
                << num(t.k_z[i]) << ", terminal rel rms " << num(t.terminal_relative_rms[i]) << ", EU "
                << num(t.eu_combined[i]) << "\n";
        }
        const double worst = t.max_rel_diff.empty() ? 0.0 : *std::max_element(t.max_rel_diff.begin(), t.max_rel_diff.end());
        out.c9 = {t.pass, "successive relative differences " + list(t.max_rel_diff) + ", worst " + num(worst) +
                              " (<= 0.01)"};
      }
      if (want.count(5)) {
        const DecompositionReport ref = decompose_on(c.x, m, u, *b, spec, c.seeds(), c.n_paths, c.n_paths, &xs);
        HedgeSpec lower = spec;
        lower.regression.degree = spec.regression.degree - 1;
        const DecompositionReport deg = decompose_on(c.x, m, u, *b, lower, c.seeds(), c.n_paths, c.n_paths, &xs);
        auto coarse = std::make_unique<SimulationBundle>(build_bundle_under_Q(m, coarsen(b->Wtilde, 2)));
        b.reset();
        const DecompositionReport cdt = decompose_on(c.x, m, u, *coarse, spec, c.seeds(), c.n_paths, c.n_paths);
        const bool lim_ok = ref.terminal_relative_rms <= th::terminal_rel_rms_ou;
        const bool dt_ok = ref.terminal_relative_rms < cdt.terminal_relative_rms;
        const bool deg_ok = ref.terminal_relative_rms < deg.terminal_relative_rms;
        log() << "  OU theta: terminal rel rms " << num(ref.terminal_relative_rms) << " (reference), "
              << num(cdt.terminal_relative_rms) << " (dt 2^-8), " << num(deg.terminal_relative_rms) << " (degree "
              << lower.regression.degree << ")\n";
        c5_ok = c5_ok && lim_ok && dt_ok && deg_ok;
        c5_detail += std::string(c5_detail.empty() ? "" : "; ") + "OU " + num(ref.terminal_relative_rms) +
                     " (<= 0.10), coarser dt " + num(cdt.terminal_relative_rms) +
                     (dt_ok ? " (decreasing)" : " (NOT decreasing)") + ", lower degree " +
                     num(deg.terminal_relative_rms) + (deg_ok ? " (decreasing)" : " (NOT decreasing)");
      }
    }
  }
  out.c4 = {c4_ok, c4_detail};
  out.c5 = {c5_ok, c5_detail};
  return out;
}

// ------------------------------------------------------------ criterion 7

Outcome fd_oracle_check() {
  const RunConfig c = reference("power_ou.cfg");
  const FdOracles o = fd_oracles(c.market(), c.utility(), c.x, c.grid(), c.seeds());
  auto in_range = [](const FdReport& r) {
    return !r.at_roundoff && r.slope >= th::fd_slope_lo && r.slope <= th::fd_slope_hi;
  };
  const bool ok = o.frechet.at_roundoff && in_range(o.l_z) && in_range(o.l_w) && in_range(o.l_joint);
  double worst = 0.0;
  for (double r : o.frechet.remainder) worst = std::max(worst, r);
  return {ok, "theta remainder " + std::string(o.frechet.at_roundoff ? "at roundoff" : "ABOVE roundoff") +
                  " (max " + num(worst) + "); L slopes z " + num(o.l_z.slope) + ", w " + num(o.l_w.slope) +
                  ", joint " + num(o.l_joint.slope) + " (in [1.7, 2.3])"};
}

// ------------------------------------------------------------ criterion 8

Outcome variational_flow() {
  const RunConfig ou = reference("power_ou.cfg");
  const GronwallReport g = check_gronwall(ou.market().risk(), ou.grid());
  const double k_expected = ou.ou.v * (1.0 + ou.ou.beta * ou.horizon);
  const bool g_ok = g.ok && std::abs(g.K - k_expected) <= 1e-12;

  const RunConfig cc = reference("power_constant.cfg");
  const Phi1Refinement r = phi1_refinement(cc.market(), cc.horizon, halving_ladder(cc.n_steps, 4), 2000, cc.seeds());
  const double min_factor = *std::min_element(r.factors.begin(), r.factors.end());
  log() << "  phi1 rms error " << list(r.rms_error) << ", factors " << list(r.factors) << "\n";
  return {g_ok && min_factor >= th::phi1_decay_factor,
          "Gronwall K " + num(g.K) + ", worst ratio " + num(g.worst_ratio) + (g.ok ? " (<= 1)" : " (> 1)") +
              "; closed-form flow error " + list(r.rms_error) + ", min decay factor " + num(min_factor) + " (>= 1.3)"};
}

// ----------------------------------------------------------- criterion 10

std::map<std::string, std::string> read_dir(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[e.path().filename().string()] = ss.str();
  }
  return files;
}

// two verify runs into the same directory; the runtime bound covers the whole suite up to here
Outcome determinism(clock_type::time_point suite_start, bool full_suite) {
  const std::filesystem::path out = std::filesystem::temp_directory_path() / "portdec_acceptance_determinism";
  std::filesystem::remove_all(out);
  const std::string cmd = std::string(PORTDEC_CLI) + " verify --config " + PORTDEC_CONFIG_DIR +
                          "/smoke_ou.cfg --out " + out.string() + " >/dev/null 2>&1";
  const int s1 = std::system(cmd.c_str());
  const auto first = read_dir(out);
  const int s2 = std::system(cmd.c_str());
  const auto second = read_dir(out);
  std::filesystem::remove_all(out);
  const bool ran = WIFEXITED(s1) && WIFEXITED(s2) && WEXITSTATUS(s1) == WEXITSTATUS(s2) && WEXITSTATUS(s1) <= 1;
  const bool same = ran && !first.empty() && first == second;
  const double secs = std::chrono::duration<double>(clock_type::now() - suite_start).count();
  const bool time_ok = secs <= th::verify_runtime_seconds;
  return {same && time_ok, std::to_string(first.size()) + " output files " + (same ? "byte-identical" : "DIFFER") +
                               " across two verify runs; " + (full_suite ? "full" : "selected") + " suite " +
                               num(secs) + " s (<= 900 s)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> want;
  for (int i = 1; i < argc; ++i) want.insert(std::atoi(argv[i]));
  const bool full = want.empty();
  if (full) want = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  const char* titles[] = {"",
                          "eu1 identity under dt refinement",
                          "log utility degeneracy",
                          "budget martingale at stopping times",
                          "martingale representation of V",
                          "terminal optimality of the decomposition",
                          "budget split x*",
                          "Frechet and functional-derivative oracles",
                          "variational flow",
                          "truncation ladder",
                          "determinism and runtime"};

  const auto start = clock_type::now();
  std::map<int, Outcome> results;
  auto run = [&](int id, const std::function<Outcome()>& f) {
    if (!want.count(id)) return;
    const auto t0 = clock_type::now();
    log() << "criterion " << id << ": " << titles[id] << "\n";
    try {
      results[id] = f();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
    log() << "  (" << num(std::chrono::duration<double>(clock_type::now() - t0).count()) << " s)\n";
  };

  run(1, eu1_identity);
  run(2, log_degeneracy_check);
  run(3, budget_martingale);
  run(7, fd_oracle_check);
  run(8, variational_flow);
  if (want.count(4) || want.count(5) || want.count(6) || want.count(9)) {
    const auto t0 = clock_type::now();
    log() << "criteria 4, 5, 6, 9: hedging pipelines\n";
    try {
      const PipelineResults p = pipelines(want);
      if (want.count(4)) results[4] = p.c4;
      if (want.count(5)) results[5] = p.c5;
      if (want.count(6)) results[6] = p.c6;
      if (want.count(9)) results[9] = p.c9;
    } catch (const std::exception& e) {
      for (int id : {4, 5, 6, 9}) {
        if (want.count(id)) results[id] = {false, std::string("exception: ") + e.what()};
      }
    }
    log() << "  (" << num(std::chrono::duration<double>(clock_type::now() - t0).count()) << " s)\n";
  }
  run(10, [&] { return determinism(start, full); });

  bool all = true;
  for (const auto& [id, r] : results) {
    std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << titles[id] << "): " << r.detail
              << std::endl;
    all = all && r.pass;
  }
  return all ? 0 : 1;
}
