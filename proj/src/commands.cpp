#include "portdec/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "portdec/errors.hpp"
#include "portdec/parallel.hpp"
#include "portdec/stats.hpp"
#include "portdec/thresholds.hpp"

namespace portdec {

std::string to_string(Command c) {
  switch (c) {
    case Command::simulate: return "simulate";
    case Command::myopic: return "myopic";
    case Command::hedge: return "hedge";
    case Command::decompose: return "decompose";
    case Command::verify: return "verify";
  }
  return "?";
}

Command parse_command(const std::string& name) {
  for (Command c : {Command::simulate, Command::myopic, Command::hedge, Command::decompose, Command::verify}) {
    if (to_string(c) == name) return c;
  }
  throw ConfigError("unknown command '" + name + "'");
}

bool CommandResult::all_pass() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

namespace {

constexpr std::size_t kChunk = 1024;

Json estimate_json(const MeanEstimate& m) {
  return Json{{"mean", number_or_null(m.mean)}, {"se", number_or_null(m.se)}, {"n", m.n}};
}

Json numbers(const std::vector<double>& v) {
  Json a = Json::array();
  for (double d : v) a.push_back(number_or_null(d));
  return a;
}

Json header(Command c, const RunConfig& config) {
  Json h;
  h["tool"] = tool_name;
  h["version"] = tool_version;
  h["command"] = to_string(c);
  h["seed"] = config.seed;
  Json echo = Json::object();
  for (const auto& [k, v] : config.echo()) echo[k] = v;
  h["config"] = echo;
  return h;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

bool is_ou(const RunConfig& c) { return c.risk_kind == RiskKind::ou; }

double terminal_threshold(const RunConfig& c) {
  return is_ou(c) ? thresholds::terminal_rel_rms_ou : thresholds::terminal_rel_rms_constant;
}

double residual_threshold(const RunConfig& c) {
  return is_ou(c) ? thresholds::residual_ratio_ou : thresholds::residual_ratio_constant;
}

// per-node means and standard deviations of `cols` quantities, streamed over P paths
struct NodeMoments {
  std::vector<std::vector<double>> mean, sd;
};

template <class Fill>
NodeMoments stream_node_moments(std::size_t n_paths, std::size_t nn, std::size_t cols, Fill&& fill) {
  std::vector<std::vector<double>> s(cols, std::vector<double>(nn, 0.0)), s2 = s;
  std::vector<double> buf(kChunk * nn * cols);
  for (std::size_t begin = 0; begin < n_paths; begin += kChunk) {
    const std::size_t len = std::min(kChunk, n_paths - begin);
    parallel_for(len, [&](std::size_t i) {
      fill(begin + i, std::span<double>(buf).subspan(i * nn * cols, nn * cols));
    });
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t c = 0; c < cols; ++c) {
        for (std::size_t k = 0; k < nn; ++k) {
          const double v = buf[(i * cols + c) * nn + k];
          s[c][k] += v;
          s2[c][k] += v * v;
        }
      }
    }
  }
  NodeMoments m;
  const double np = static_cast<double>(n_paths);
  m.mean = s;
  m.sd = s;
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t k = 0; k < nn; ++k) {
      m.mean[c][k] = s[c][k] / np;
      m.sd[c][k] = n_paths > 1 ? std::sqrt(std::max(0.0, (s2[c][k] - np * m.mean[c][k] * m.mean[c][k]) / (np - 1.0))) : 0.0;
    }
  }
  return m;
}

// ------------------------------------------------------------------- checks

Check check_utility(const RunConfig& config) {
  const UtilityValidation v = validate_utility(config.utility());
  Check c{"utility", "utility validation", v.inversion_ok && v.monotone, "", Json::object()};
  c.metrics = {{"inada_at_zero", v.inada_at_zero},
               {"inada_at_infinity", v.inada_at_infinity},
               {"monotone", v.monotone},
               {"max_inversion_residual", v.max_inversion_residual},
               {"inversion_skipped", v.inversion_skipped},
               {"growth_ok", v.growth_ok},
               {"conforming", v.conforming},
               {"notes", v.notes}};
  c.detail = std::string(v.conforming ? "conforming" : "non-conforming") + ", inversion residual " +
             fmt(v.max_inversion_residual);
  return c;
}

Json fd_json(const FdReport& r) {
  return {{"eps", numbers(r.eps)}, {"remainder", numbers(r.remainder)}, {"slope", number_or_null(r.slope)},
          {"at_roundoff", r.at_roundoff}};
}

std::vector<Check> check_fd(const RunConfig& config) {
  const FdOracles o = fd_oracles(config.market(), config.utility(), config.x, config.grid(), config.seeds());
  Check f{"frechet_fd", "theta functional Frechet remainder at roundoff", o.frechet.at_roundoff, "", fd_json(o.frechet)};
  f.detail = o.frechet.at_roundoff ? "all remainders at roundoff" : "remainder above roundoff";
  const bool l_ok = fd_slope_ok(o.l_z) && fd_slope_ok(o.l_w) && fd_slope_ok(o.l_joint);
  Check l{"functional_fd", "directional derivative of L, remainder slope in [1.7, 2.3]", l_ok, "",
          {{"z", fd_json(o.l_z)}, {"w", fd_json(o.l_w)}, {"joint", fd_json(o.l_joint)}}};
  auto slope_text = [](const FdReport& r) { return r.at_roundoff ? std::string("roundoff") : fmt(r.slope); };
  l.detail = "slopes z " + slope_text(o.l_z) + ", w " + slope_text(o.l_w) + ", joint " + slope_text(o.l_joint);
  return {f, l};
}

Check check_gronwall_bound(const RunConfig& config) {
  const GronwallReport g = check_gronwall(config.market().risk(), config.grid());
  Check c{"gronwall", "variational flow within exp(K (t - s)) at every anchor", g.ok, "", Json::object()};
  c.metrics = {{"K", g.K}, {"worst_ratio", g.worst_ratio}, {"worst_anchor", g.worst_anchor},
               {"worst_node", g.worst_node}};
  c.detail = "K " + fmt(g.K) + ", worst ratio " + fmt(g.worst_ratio);
  return c;
}

Check check_phi1(const RunConfig& config) {
  const std::vector<std::size_t> steps = halving_ladder(config.n_steps, config.verify.eu1_levels);
  const Phi1Refinement r =
      phi1_refinement(config.market(), config.horizon, steps, config.verify.phi1_paths, config.seeds());
  bool ok = !r.factors.empty();
  for (double f : r.factors) ok = ok && f >= thresholds::phi1_decay_factor;
  Check c{"phi1", "Euler flow against the closed form, decay per dt halving >= 1.3", ok, "", Json::object()};
  c.metrics = {{"n_steps", steps}, {"dt", numbers(r.dt)}, {"rms_error", numbers(r.rms_error)},
               {"factors", numbers(r.factors)}, {"rms_error_cols", numbers(r.rms_error_cols)},
               {"n_paths", config.verify.phi1_paths}};
  c.detail = "finest error " + fmt(r.rms_error.back()) + ", min factor " +
             fmt(r.factors.empty() ? 0.0 : *std::min_element(r.factors.begin(), r.factors.end()));
  return c;
}

Check check_eu1(const RunConfig& config, const std::vector<std::size_t>& steps, std::size_t n_paths,
                Eu1Refinement* out = nullptr) {
  const Eu1Refinement r =
      eu1_refinement(config.market(), config.utility(), config.x, config.horizon, steps, n_paths, config.seeds());
  bool ok = r.slope > 0.0 && r.rms.back() <= thresholds::eu1_finest_rms_rel * std::abs(config.x);
  for (double f : r.factors) ok = ok && f >= thresholds::eu1_decay_factor;
  Check c{"eu1", "X + V - I(U'(x) Z) decays under dt halving", ok, "", Json::object()};
  c.metrics = {{"n_steps", r.steps}, {"dt", numbers(r.dt)}, {"rms", numbers(r.rms)},
               {"max_abs", numbers(r.max_abs)}, {"factors", numbers(r.factors)},
               {"slope", number_or_null(r.slope)}, {"n_paths", r.n_paths}};
  c.detail = "finest rms " + fmt(r.rms.back()) + ", slope " + fmt(r.slope) + ", min factor " +
             fmt(*std::min_element(r.factors.begin(), r.factors.end()));
  if (out) *out = r;
  return c;
}

Check check_budget(const RunConfig& config, std::size_t n_paths) {
  const MarketModel model = config.market();
  const TimeGrid grid = config.grid();
  const std::vector<StoppingRule> rules{StoppingRule::at(0.5 * config.horizon), StoppingRule::at(config.horizon),
                                        StoppingRule::hitting(default_hitting_level(model, grid))};
  const std::vector<BudgetResult> res = budget_study(model, config.utility(), config.x, grid, n_paths, config.seeds(), rules);
  bool ok = true;
  Json rows = Json::array();
  double worst = 0.0;
  for (const BudgetResult& b : res) {
    ok = ok && b.z <= thresholds::budget_se;
    worst = std::max(worst, b.z);
    rows.push_back({{"rule", b.rule.describe()}, {"estimate", estimate_json(b.estimate)}, {"z", number_or_null(b.z)}});
  }
  Check c{"budget", "E[Z(tau) X(tau)] within 3 SE of x", ok, "worst z " + fmt(worst), {{"rules", rows}}};
  return c;
}

Check check_admissible(const RunConfig& config, const MyopicStream& s) {
  const bool required = config.utility().conforming();
  Check c{"admissibility", "X + V > 0 along every myopic path", !required || s.admissibility.ok, "", Json::object()};
  c.metrics = {{"required", required}, {"violations", s.admissibility.violations},
               {"min_value", s.admissibility.min_value}, {"n_paths", s.n_paths}};
  c.detail = std::string(required ? "" : "not required for a non-conforming utility, ") + "min X + V " +
             fmt(s.admissibility.min_value);
  return c;
}

Check check_log(const RunConfig& config, const SimulationBundle& b) {
  const LogDegeneracy d = log_degeneracy(config.market(), config.utility(), config.x, b, config.hedge_spec());
  const bool ok = d.max_abs_F <= thresholds::log_F_abs && d.max_abs_V == 0.0 && d.max_abs_lambda == 0.0 &&
                  d.max_abs_beta == 0.0 && d.max_abs_pi_bar == 0.0 &&
                  d.max_weight_dev <= thresholds::log_weight_abs && d.xstar_exact;
  Check c{"log_degeneracy", "log utility: F, V, lambda, beta, pi-bar vanish and weights equal zeta", ok, "", Json::object()};
  c.metrics = {{"max_abs_F", d.max_abs_F}, {"max_abs_V", d.max_abs_V}, {"max_abs_lambda", d.max_abs_lambda},
               {"max_abs_beta", d.max_abs_beta}, {"max_abs_pi_bar", d.max_abs_pi_bar},
               {"max_weight_dev", d.max_weight_dev}, {"short_circuited", d.short_circuited},
               {"xstar", d.xstar}, {"xstar_exact", d.xstar_exact}};
  c.detail = "max weight deviation " + fmt(d.max_weight_dev);
  return c;
}

Check check_xstar(const RunConfig& config, const SimulationBundle& b, XStarResult* out = nullptr) {
  const XStarCheck x = xstar_check(config.x, b, config.utility());
  Check c{"xstar", "budget split against its reference", x.pass, "", Json::object()};
  c.metrics = {{"xstar", x.result.xstar}, {"reference", x.reference}, {"expected", x.expected},
               {"difference", x.difference}, {"tolerance", x.tolerance}, {"iterations", x.result.iterations},
               {"exact", x.result.exact}};
  c.detail = x.reference + ": x* " + fmt(x.result.xstar) + ", diff " + fmt(x.difference) + " <= " + fmt(x.tolerance);
  if (out) *out = x.result;
  return c;
}

std::vector<Check> hedge_checks(const RunConfig& config, const HedgeResult& h) {
  const double lim = residual_threshold(config);
  Check r{"hedge_residual", "representation residual variance ratio", h.residual_ratio <= lim, "", Json::object()};
  r.metrics = {{"residual_ratio", h.residual_ratio}, {"threshold", lim}, {"var_v", h.var_v},
               {"var_residual", h.var_residual}, {"n_paths", h.n_paths}};
  r.detail = "ratio " + fmt(h.residual_ratio) + " <= " + fmt(lim);
  Check t{"tower", "mean beta dW-tilde vanishes node by node", h.tower_max_z <= thresholds::tower_se, "",
          {{"max_z", number_or_null(h.tower_max_z)}, {"threshold", thresholds::tower_se}}};
  t.detail = "max z " + fmt(h.tower_max_z);
  return {r, t};
}

Json hedge_json(const HedgeResult& h) {
  return {{"x", h.x},
          {"ev", estimate_json(h.ev)},
          {"var_v", h.var_v},
          {"var_residual", h.var_residual},
          {"residual_ratio", h.residual_ratio},
          {"tower_max_z", number_or_null(h.tower_max_z)},
          {"max_lambda_abs", number_or_null(h.max_lambda_abs)},
          {"short_circuited", h.short_circuited},
          {"truncation", {{"k_theta", number_or_null(h.truncation.k_theta)},
                          {"k_z", number_or_null(h.truncation.k_z)},
                          {"auto", h.auto_truncated}}},
          {"max_condition", number_or_null(h.model.max_condition())},
          {"auto_ridge_nodes", h.model.auto_ridge_nodes()},
          {"n_paths", h.n_paths}};
}

Series hedge_series(const RunConfig& config, const HedgeResult& h, const std::string& name) {
  const TimeGrid grid = config.grid();
  Series s{name, {}, {}};
  s.add("t", grid.nodes());
  s.add("beta_mean", h.beta_mean);
  s.add("beta_sd", h.beta_sd);
  s.add("hedge_amount_mean", h.hedge_amount_mean);
  s.add("v_mean", h.v_mean);
  std::vector<double> anchor(grid.n_nodes());
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) anchor[k] = h.model.zero() || h.model.is_anchor(k) ? 1.0 : 0.0;
  s.add("anchor", anchor);
  return s;
}

Check check_beta_oracle(const RunConfig& config, const HedgeResult& h, const SimulationBundle& b) {
  const BetaOracle o = beta_oracle_constant_crra(h, b, config.market(), config.utility(), h.x);
  Check c{"beta_oracle", "beta-hat against the closed form", o.rel_rmse <= thresholds::beta_oracle_rel_rmse, "",
          {{"rel_rmse", o.rel_rmse}, {"samples", o.samples}, {"threshold", thresholds::beta_oracle_rel_rmse}}};
  c.detail = "relative rmse " + fmt(o.rel_rmse);
  return c;
}

Check check_nested(const RunConfig& config, const HedgeResult& h, const SimulationBundle& b) {
  const VerifyBudget& vb = config.verify;
  const std::vector<NestedProbe> probes = nested_mc_check(h.x, config.market(), config.utility(), b, h,
                                                          vb.nested_nodes, vb.nested_states, vb.nested_inner,
                                                          config.seeds());
  std::size_t over = 0;
  double worst = 0.0;
  Json rows = Json::array();
  for (const NestedProbe& p : probes) {
    if (!(p.score <= thresholds::nested_se)) ++over;
    worst = std::max(worst, p.score);
    rows.push_back({{"node", p.node}, {"path", p.path}, {"predicted", p.predicted}, {"predicted_se", p.predicted_se},
                    {"nested", p.nested}, {"nested_se", p.nested_se}, {"score", number_or_null(p.score)}});
  }
  // a 3-SE band is exceeded by chance now and then; allow 5% of probes
  const std::size_t allowed = std::max<std::size_t>(1, probes.size() / 20);
  Check c{"nested_mc", "beta-hat against nested simulation at fixed states", over <= allowed, "",
          {{"probes", rows}, {"exceedances", over}, {"allowed", allowed}}};
  c.detail = std::to_string(over) + " of " + std::to_string(probes.size()) + " probes beyond 3 SE, worst " + fmt(worst);
  return c;
}

Json decomposition_json(const DecompositionReport& r) {
  return {{"x", r.x},
          {"xstar", r.xstar.xstar},
          {"xstar_iterations", r.xstar.iterations},
          {"ev_xstar", estimate_json(r.xstar.ev)},
          {"terminal_rms", r.terminal_rms},
          {"terminal_relative_rms", r.terminal_relative_rms},
          {"test_paths", r.test_paths},
          {"eu_combined", number_or_null(r.eu_combined)},
          {"eu_myopic_only", number_or_null(r.eu_myopic_only)},
          {"eu_merton", number_or_null(r.eu_merton)},
          {"ruined", {{"combined", r.ruined_combined}, {"myopic_only", r.ruined_myopic}, {"merton", r.ruined_merton}}},
          {"conforming", r.conforming},
          {"hedge", hedge_json(r.hedge)}};
}

Series decomposition_series(const RunConfig& config, const DecompositionReport& r) {
  Series s{"decompose", {}, {}};
  s.add("t", config.grid().nodes());
  auto add_summary = [&](const std::string& stem, const std::vector<NodeSummary>& v) {
    std::vector<double> m, a, b, c;
    for (const NodeSummary& n : v) {
      m.push_back(n.mean);
      a.push_back(n.q05);
      b.push_back(n.q50);
      c.push_back(n.q95);
    }
    s.add(stem + "_mean", m);
    s.add(stem + "_q05", a);
    s.add(stem + "_q50", b);
    s.add(stem + "_q95", c);
  };
  add_summary("myopic_weight", r.myopic_weight);
  add_summary("hedge_weight", r.hedge_weight);
  s.add("wealth_mean", r.wealth_mean);
  s.add("v_mean", r.hedge.v_mean);
  s.add("beta_mean", r.hedge.beta_mean);
  return s;
}

Check check_terminal(const RunConfig& config, const DecompositionReport& r) {
  const double lim = terminal_threshold(config);
  Check c{"terminal", "relative rms of X(T) - I(U'(x*) Z(T)) out of sample", r.terminal_relative_rms <= lim, "",
          {{"terminal_relative_rms", r.terminal_relative_rms}, {"threshold", lim}, {"test_paths", r.test_paths}}};
  c.detail = "relative rms " + fmt(r.terminal_relative_rms) + " <= " + fmt(lim);
  return c;
}

Check check_truncation(const RunConfig& config, const SimulationBundle& b, const XStarResult& xs) {
  const TruncationLadder t = truncation_ladder(config.x, config.market(), config.utility(), b, config.hedge_spec(),
                                               config.seeds(), config.n_paths, config.n_paths,
                                               config.verify.truncation_ladder, &xs);
  Json beta = Json::array();
  for (const auto& v : t.beta_mean) beta.push_back(numbers(v));
  Check c{"truncation", "outputs stable across the truncation ladder (1%)", t.pass, "",
          {{"multiples", t.multiples}, {"k_theta", numbers(t.k_theta)}, {"k_z", numbers(t.k_z)},
           {"terminal_relative_rms", numbers(t.terminal_relative_rms)}, {"eu_combined", numbers(t.eu_combined)},
           {"max_rel_diff", numbers(t.max_rel_diff)}}};
  c.detail = "max successive difference " +
             fmt(t.max_rel_diff.empty() ? 0.0 : *std::max_element(t.max_rel_diff.begin(), t.max_rel_diff.end()));
  return c;
}

Json checks_json(const std::vector<Check>& checks) {
  Json a = Json::array();
  for (const Check& c : checks) a.push_back(to_json(c));
  return a;
}

// --------------------------------------------------------------- commands

void run_simulate(const RunConfig& config, CommandResult& out) {
  const MarketModel model = config.market();
  const TimeGrid grid = config.grid();
  const std::size_t n = model.n();
  const std::size_t nn = grid.n_nodes();
  const SeedSpec seeds = config.seeds();
  // columns: theta_1, Z, S_1, Z S_1
  const NodeMoments m = stream_node_moments(config.n_paths, nn, 4, [&](std::size_t p, std::span<double> o) {
    PathSample s(grid, n);
    brownian_path(grid, n, seeds, p, s.W);
    complete_path_under_P(model, grid, s, p);
    for (std::size_t k = 0; k < nn; ++k) {
      o[k] = s.theta[k * n];
      o[nn + k] = s.Z[k];
      o[2 * nn + k] = s.S[k * n];
      o[3 * nn + k] = s.Z[k] * s.S[k * n];
    }
  });
  Series s{"bundle", {}, {}};
  s.add("t", grid.nodes());
  s.add("theta_mean", m.mean[0]);
  s.add("theta_sd", m.sd[0]);
  s.add("z_mean", m.mean[1]);
  s.add("z_sd", m.sd[1]);
  s.add("s_mean", m.mean[2]);
  s.add("s_sd", m.sd[2]);
  s.add("zs_mean", m.mean[3]);
  out.series.push_back(s);

  const double rt = std::sqrt(static_cast<double>(config.n_paths));
  const MeanEstimate ez{m.mean[1].back(), m.sd[1].back() / rt, config.n_paths};
  const MeanEstimate ezs_full{m.mean[3].back(), m.sd[3].back() / rt, config.n_paths};
  out.checks.push_back({"z_martingale", "E[Z(T)] within 3 SE of 1", ez.z_score(1.0) <= thresholds::budget_se,
                        "z " + fmt(ez.z_score(1.0)), {{"estimate", estimate_json(ez)}}});
  out.checks.push_back({"zs_martingale", "E[Z(T) S(T)] within 3 SE of S(0)",
                        ezs_full.z_score(model.s0()[0]) <= thresholds::budget_se,
                        "z " + fmt(ezs_full.z_score(model.s0()[0])), {{"estimate", estimate_json(ezs_full)}}});
  out.summary["results"] = {{"measure", "P"},
                            {"n_paths", config.n_paths},
                            {"risk", model.risk().describe()},
                            {"terminal_z", estimate_json(ez)},
                            {"terminal_zs", estimate_json(ezs_full)},
                            {"theta_T_mean", m.mean[0].back()},
                            {"theta_T_sd", m.sd[0].back()}};
}

void run_myopic(const RunConfig& config, CommandResult& out, std::ostream& log) {
  const MyopicStream st = myopic_stream(config, config.n_paths);
  const TimeGrid grid = config.grid();
  Series s{"myopic", {}, {}};
  s.add("t", grid.nodes());
  s.add("weight_mean", st.weight_mean);
  s.add("wealth_mean", st.wealth_mean);
  s.add("v_mean", st.v_mean);
  s.add("eu1_rms", st.eu1_rms);
  out.series.push_back(s);
  log << "myopic: streamed " << st.n_paths << " paths\n";

  Eu1Refinement r;
  out.checks.push_back(check_eu1(config, halving_ladder(config.n_steps, config.verify.eu1_levels),
                                 config.verify.eu1_paths, &r));
  out.checks.push_back(check_budget(config, config.verify.budget_paths));
  out.checks.push_back(check_admissible(config, st));
  out.summary["results"] = {{"n_paths", st.n_paths},
                            {"eu1_rms", st.eu1_rms_all},
                            {"eu1_slope", number_or_null(r.slope)},
                            {"terminal_wealth_mean", st.wealth_mean.back()},
                            {"terminal_v_mean", st.v_mean.back()}};
}

void run_hedge_command(const RunConfig& config, CommandResult& out, std::ostream& log) {
  const MarketModel model = config.market();
  const SimulationBundle b = simulate_bundle_under_Q(model, config.grid(), config.n_paths, config.seeds());
  log << "hedge: bundle of " << b.n_paths() << " paths\n";
  const HedgeResult h = run_hedge(config.x, model, config.utility(), b, config.hedge_spec());
  out.series.push_back(hedge_series(config, h, "hedge"));
  for (Check& c : hedge_checks(config, h)) out.checks.push_back(std::move(c));
  out.summary["results"] = hedge_json(h);
}

void run_decompose(const RunConfig& config, CommandResult& out, std::ostream& log) {
  const MarketModel model = config.market();
  const UtilityModel u = config.utility();
  const SimulationBundle b = simulate_bundle_under_Q(model, config.grid(), config.n_paths, config.seeds());
  log << "decompose: fit bundle of " << b.n_paths() << " paths\n";
  const DecompositionReport r =
      decompose_on(config.x, model, u, b, config.hedge_spec(), config.seeds(), config.n_paths, config.n_paths);
  out.series.push_back(decomposition_series(config, r));
  out.checks.push_back(check_terminal(config, r));

  // SE of E-tilde V_{x*}(T) over path doublings on the same bundle
  std::vector<double> vt(b.n_paths());
  parallel_for(b.n_paths(), [&](std::size_t p) { vt[p] = correction_terminal(r.xstar.xstar, b.view(p), u); });
  SlopeTable se{"n_paths", "se_expected_correction", {}, {}, 0.0};
  for (std::size_t m = std::max<std::size_t>(b.n_paths() / 8, 2); m <= b.n_paths(); m *= 2) {
    se.params.push_back(static_cast<double>(m));
    se.values.push_back(mean_estimate(std::span<const double>(vt).first(m)).se);
  }
  {
    std::vector<double> a, v;
    for (std::size_t i = 0; i < se.params.size(); ++i) {
      if (se.values[i] > 0.0) {
        a.push_back(se.params[i]);
        v.push_back(se.values[i]);
      }
    }
    se.slope = a.size() >= 2 ? loglog_slope(a, v) : std::numeric_limits<double>::quiet_NaN();
  }

  const MyopicStream st = myopic_stream(config, std::min(config.n_paths, config.verify.eu1_paths));
  Json res = decomposition_json(r);
  res["eu1_rms"] = st.eu1_rms_all;
  res["eu1_n_paths"] = st.n_paths;
  res["convergence"] = Json::array({to_json(se)});
  out.summary["results"] = res;
}

void run_verify(const RunConfig& config, CommandResult& out, std::ostream& log) {
  out.checks = verify_checks(config, log, out.series);
}

}  // namespace

// ------------------------------------------------------------- myopic stream

MyopicStream myopic_stream(const RunConfig& config, std::size_t n_paths) {
  const MarketModel model = config.market();
  const UtilityModel u = config.utility();
  const TimeGrid grid = config.grid();
  const SeedSpec seeds = config.seeds();
  const std::size_t n = model.n();
  const std::size_t nn = grid.n_nodes();
  const double x = config.x;

  MyopicStream st;
  st.n_paths = n_paths;
  st.admissibility.min_value = std::numeric_limits<double>::infinity();
  std::vector<double> sw(nn, 0.0), sx(nn, 0.0), sv(nn, 0.0), sr(nn, 0.0);
  // per path: weight, wealth, V, residual
  std::vector<double> buf(kChunk * 4 * nn);
  for (std::size_t begin = 0; begin < n_paths; begin += kChunk) {
    const std::size_t len = std::min(kChunk, n_paths - begin);
    parallel_for(len, [&](std::size_t i) {
      const std::size_t p = begin + i;
      PathSample s(grid, n);
      brownian_path(grid, n, seeds, p, s.W);
      complete_path_under_P(model, grid, s, p);
      const PathView v = s.view(grid, n);
      std::span<double> o = std::span<double>(buf).subspan(i * 4 * nn, 4 * nn);
      myopic_wealth_path(x, v, model, u, o.subspan(nn, nn));
      correction_path(x, v, u, o.subspan(2 * nn, nn));
      eu1_residual_path(x, v, model, u, o.subspan(3 * nn, nn));
      std::vector<double> units(n);
      for (std::size_t k = 0; k < nn; ++k) {
        myopic_units_at(x, v, model, u, k, units);
        o[k] = units[0] * v.s(k, 0) / o[nn + k];
      }
    });
    for (std::size_t i = 0; i < len; ++i) {
      const double* o = buf.data() + i * 4 * nn;
      bool violated = false;
      for (std::size_t k = 0; k < nn; ++k) {
        sw[k] += o[k];
        sx[k] += o[nn + k];
        sv[k] += o[2 * nn + k];
        sr[k] += o[3 * nn + k] * o[3 * nn + k];
        const double xv = o[nn + k] + o[2 * nn + k];
        if (xv < st.admissibility.min_value) st.admissibility.min_value = xv;
        if (!(xv > 0.0) && !violated) {
          violated = true;
          if (st.admissibility.violations == 0) {
            st.admissibility.first_path = begin + i;
            st.admissibility.first_step = k;
          }
          ++st.admissibility.violations;
        }
      }
    }
  }
  st.admissibility.ok = st.admissibility.violations == 0;
  const double np = static_cast<double>(n_paths);
  double all = 0.0;
  for (std::size_t k = 0; k < nn; ++k) {
    st.weight_mean.push_back(sw[k] / np);
    st.wealth_mean.push_back(sx[k] / np);
    st.v_mean.push_back(sv[k] / np);
    st.eu1_rms.push_back(std::sqrt(sr[k] / np));
    all += sr[k];
  }
  st.eu1_rms_all = std::sqrt(all / (np * static_cast<double>(nn)));
  return st;
}

// --------------------------------------------------------------- verify

std::vector<Check> verify_checks(const RunConfig& config, std::ostream& log, std::vector<Series>& series) {
  using clock = std::chrono::steady_clock;
  std::vector<Check> checks;
  auto t0 = clock::now();
  auto add = [&](Check c) {
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    log << (c.pass ? "PASS " : "FAIL ") << c.id << ": " << c.detail << " (" << std::fixed << std::setprecision(1)
        << secs << "s)\n"
        << std::defaultfloat;
    checks.push_back(std::move(c));
    t0 = clock::now();
  };
  const UtilityModel u = config.utility();
  const MarketModel model = config.market();
  const TimeGrid grid = config.grid();

  add(check_utility(config));
  for (Check& c : check_fd(config)) add(std::move(c));
  add(check_gronwall_bound(config));
  add(check_phi1(config));

  Eu1Refinement eu1;
  add(check_eu1(config, halving_ladder(config.n_steps, config.verify.eu1_levels), config.verify.eu1_paths, &eu1));
  {
    Series s{"verify_eu1", {}, {}};
    s.add("t", grid.nodes());
    s.add("eu1_rms", eu1.finest_rms_per_node);
    series.push_back(s);
  }
  add(check_budget(config, config.verify.budget_paths));
  add(check_admissible(config, myopic_stream(config, std::min(config.n_paths, config.verify.eu1_paths))));

  const SimulationBundle b = simulate_bundle_under_Q(model, grid, config.n_paths, config.seeds());
  if (u.is_log()) add(check_log(config, b));
  XStarResult xs;
  add(check_xstar(config, b, &xs));

  const DecompositionReport r =
      decompose_on(config.x, model, u, b, config.hedge_spec(), config.seeds(), config.n_paths, config.n_paths, &xs);
  if (!u.is_log()) {
    for (Check& c : hedge_checks(config, r.hedge)) add(std::move(c));
    if (model.risk().is_constant() && std::holds_alternative<PowerUtility>(u.variant())) {
      add(check_beta_oracle(config, r.hedge, b));
    }
    add(check_nested(config, r.hedge, b));
  }
  add(check_terminal(config, r));
  series.push_back(decomposition_series(config, r));
  add(check_truncation(config, b, xs));
  return checks;
}

// --------------------------------------------------------------- dispatch

CommandResult run_command(Command c, const RunConfig& config, std::ostream& log) {
  CommandResult out;
  out.summary = header(c, config);
  switch (c) {
    case Command::simulate: run_simulate(config, out); break;
    case Command::myopic: run_myopic(config, out, log); break;
    case Command::hedge: run_hedge_command(config, out, log); break;
    case Command::decompose: run_decompose(config, out, log); break;
    case Command::verify: run_verify(config, out, log); break;
  }
  std::size_t passed = 0;
  for (const Check& k : out.checks) passed += k.pass ? 1 : 0;
  out.summary["checks"] = checks_json(out.checks);
  out.summary["passed"] = passed;
  out.summary["failed"] = out.checks.size() - passed;
  Json files = Json::array();
  for (const Series& s : out.series) files.push_back(s.name + ".csv");
  out.summary["series"] = files;
  return out;
}

void write_outputs(const CommandResult& r, const RunConfig& config) {
  if (config.write_csv) {
    for (const Series& s : r.series) write_series(config.out_dir, s);
  }
  if (config.write_json) write_json(config.out_dir, "summary.json", r.summary);
}

int execute(Command c, const RunConfig& config, std::ostream& log, std::ostream& err) {
  try {
    const CommandResult r = run_command(c, config, log);
    write_outputs(r, config);
    for (const Check& k : r.checks) {
      if (!k.pass) err << "check failed: " << k.id << " (" << k.detail << ")\n";
    }
    return r.all_pass() ? exit_code::ok : exit_code::check_failed;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return exit_code::config_error;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return exit_code::numeric_failure;
  } catch (const EstimationError& e) {
    err << "estimation failure: " << e.what() << "\n";
    return exit_code::numeric_failure;
  } catch (const RootNotFoundError& e) {
    err << "budget split failed: " << e.what() << "\n";
    return exit_code::numeric_failure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::numeric_failure;
  }
}

}  // namespace portdec
