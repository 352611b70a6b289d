#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "portdec/thresholds.hpp"
#include "portdec/verification.hpp"

using namespace portdec;

namespace {

MarketModel one_asset(RiskModel risk) {
  return MarketModel(Eigen::MatrixXd::Constant(1, 1, 0.2), {1.0}, std::move(risk));
}

const OuRisk kOu{0.5, 1.0, 0.3, 0.2, OuDriver::P};

}  // namespace

TEST_CASE("halving ladder") {
  CHECK(halving_ladder(512, 4) == std::vector<std::size_t>{64, 128, 256, 512});
  CHECK_THROWS(halving_ladder(100, 4));
}

TEST_CASE("closed-form beta for constant theta") {
  // -k q theta z^q int_0^tau exp(a u) du at z = 1.3, tau = 0.5, evaluated by quadrature
  const std::vector<double> th{0.4};
  const std::vector<double> b = constant_crra_beta(UtilityModel::power(0.5), 1.0, th, 1.3, 0.5);
  CHECK(b[0] == doctest::Approx(0.03942583085205139).epsilon(1e-12));
  CHECK(constant_crra_beta(UtilityModel::power(0.5), 1.0, th, 1.3, 0.0)[0] == 0.0);
  CHECK_THROWS(constant_crra_beta(UtilityModel::log(), 1.0, th, 1.0, 0.5));
}

TEST_CASE("eu1 refinement decays for log utility") {
  const MarketModel m = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const Eu1Refinement r = eu1_refinement(m, UtilityModel::log(), 1.0, 1.0, {32, 64, 128}, 2000, SeedSpec{1});
  REQUIRE(r.factors.size() == 2);
  for (double f : r.factors) CHECK(f >= thresholds::eu1_decay_factor);
  CHECK(r.slope > 0.0);
  CHECK(r.finest_rms_per_node.front() == 0.0);
  CHECK_THROWS(eu1_refinement(m, UtilityModel::log(), 1.0, 1.0, {48, 64}, 10, SeedSpec{1}));
}

TEST_CASE("state flow converges to the closed form") {
  const MarketModel m = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const Phi1Refinement r = phi1_refinement(m, 1.0, {32, 64, 128, 256}, 300, SeedSpec{2});
  for (double f : r.factors) CHECK(f >= thresholds::phi1_decay_factor);
  CHECK(r.rms_error_cols.back() == 0.0);  // no risk kernel, so no w-columns
}

TEST_CASE("finite-difference oracles") {
  const MarketModel m = one_asset(RiskModel(kOu));
  const FdOracles o = fd_oracles(m, UtilityModel::power(0.5), 1.0, make_grid(1.0, 256), SeedSpec{3});
  CHECK(o.frechet.at_roundoff);
  CHECK(fd_slope_ok(o.l_z));
  CHECK(fd_slope_ok(o.l_w));
  CHECK(fd_slope_ok(o.l_joint));
  const FdOracles lg = fd_oracles(m, UtilityModel::log(), 1.0, make_grid(1.0, 64), SeedSpec{3});
  CHECK(lg.l_joint.at_roundoff);
}

TEST_CASE("budget study") {
  const MarketModel m = one_asset(RiskModel(kOu));
  const TimeGrid g = make_grid(1.0, 32);
  const std::vector<BudgetResult> r =
      budget_study(m, UtilityModel::power(0.5), 1.0, g, 20000, SeedSpec{4},
                   {StoppingRule::at(0.0), StoppingRule::at(1.0), StoppingRule::hitting(default_hitting_level(m, g))});
  REQUIRE(r.size() == 3);
  CHECK(r[0].estimate.mean == 1.0);
  CHECK(r[1].z <= 3.0);
  CHECK(r[2].z <= 3.0);
  CHECK(default_hitting_level(m, g) == doctest::Approx(0.3));
}

TEST_CASE("log degeneracy") {
  const MarketModel m = one_asset(RiskModel(kOu));
  const SimulationBundle b = simulate_bundle_under_Q(m, make_grid(1.0, 32), 500, SeedSpec{5});
  const LogDegeneracy d = log_degeneracy(m, UtilityModel::log(), 2.0, b, HedgeSpec{});
  CHECK(d.max_abs_F <= thresholds::log_F_abs);
  CHECK(d.max_abs_V == 0.0);
  CHECK(d.max_abs_lambda == 0.0);
  CHECK(d.max_abs_beta == 0.0);
  CHECK(d.max_abs_pi_bar == 0.0);
  CHECK(d.max_weight_dev <= thresholds::log_weight_abs);
  CHECK(d.short_circuited);
  CHECK(d.xstar_exact);
}

TEST_CASE("hedging oracles on a small constant-theta problem") {
  const MarketModel m = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const UtilityModel u = UtilityModel::power(0.5);
  const SimulationBundle b = simulate_bundle_under_Q(m, make_grid(1.0, 64), 10000, SeedSpec{6});
  const XStarCheck xs = xstar_check(1.0, b, u);
  CHECK(xs.pass);
  CHECK(xs.reference == "closed_form");
  // 1 / (1 + e^{0.16} - 1), up to Monte Carlo error
  CHECK(xs.result.xstar == doctest::Approx(0.8521437889662113).epsilon(0.01));

  const HedgeResult h = run_hedge(1.0, m, u, b, HedgeSpec{});
  const BetaOracle o = beta_oracle_constant_crra(h, b, m, u, 1.0);
  CHECK(o.rel_rmse <= thresholds::beta_oracle_rel_rmse);

  const std::vector<NestedProbe> probes = nested_mc_check(1.0, m, u, b, h, 2, 3, 2000, SeedSpec{6});
  CHECK(probes.size() == 6);
  for (const NestedProbe& p : probes) CHECK(p.score <= 4.0);

  const XStarCheck xl = xstar_check(1.0, b, UtilityModel::log());
  CHECK(xl.pass);
  CHECK(xl.result.xstar == 1.0);
}

TEST_CASE("convergence study ladders") {
  RunConfig c = parse_config("model.variant = ou\nmodel.alpha = 0.5\nmodel.beta = 1\nmodel.v = 0.3\nmodel.u0 = 0.2\n"
                             "utility.name = power\nutility.p = 0.5\ngrid.n_steps = 32\nmc.n_paths = 2000\n"
                             "verify.eu1_paths = 500\nverify.eu1_levels = 2\n");
  const SlopeTable dt = convergence_study(c, {Ladder::Kind::dt_halvings, {8, 16, 32}});
  CHECK(dt.parameter == "dt");
  CHECK(dt.slope > 0.0);

  const SlopeTable deg = convergence_study(c, {Ladder::Kind::basis_degrees, {0, 1, 2}});
  CHECK(deg.values[1] <= deg.values[0]);
  CHECK(deg.values[2] <= deg.values[1] * 1.1);

  const SlopeTable np = convergence_study(c, {Ladder::Kind::path_doublings, {250, 500, 1000, 2000}});
  CHECK(np.slope == doctest::Approx(-0.5).epsilon(0.3));

  const SlopeTable tr = convergence_study(c, {Ladder::Kind::truncation_levels, {4, 8}});
  CHECK(tr.values.size() == 2);
  CHECK(to_json(tr)["rows"].size() == 2);
  CHECK_THROWS(convergence_study(c, {Ladder::Kind::dt_halvings, {}}));
}
