#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "portdec/hedging.hpp"

using namespace portdec;

namespace {

MarketModel one_asset(RiskModel risk) {
  return MarketModel(Eigen::MatrixXd::Constant(1, 1, 0.2), {1.0}, std::move(risk));
}

const OuRisk kOu{0.5, 1.0, 0.3, 0.2, OuDriver::P};

}  // namespace

TEST_CASE("smooth truncation") {
  const double k = 2.0;
  for (double x = -k; x <= k; x += 0.125) CHECK(truncate_kappa(k, x) == x);
  CHECK(std::abs(truncate_kappa(k, 3 * k)) <= 3 * k);
  CHECK(truncate_kappa(k, 10 * k) == doctest::Approx(1.5 * k));
  double prev = truncate_kappa(k, -5 * k);
  for (double x = -5 * k; x <= 5 * k; x += 0.01) {
    const double y = truncate_kappa(k, x);
    CHECK(y >= prev - 1e-15);
    CHECK(truncate_kappa(k, -x) == doctest::Approx(-y));
    prev = y;
  }
  // C1 at the blend edges
  const double h = 1e-7;
  CHECK((truncate_kappa(k, k + h) - truncate_kappa(k, k)) / h == doctest::Approx(1.0).epsilon(1e-5));
  CHECK((truncate_kappa(k, 2 * k + h) - truncate_kappa(k, 2 * k - h)) / (2 * h) == doctest::Approx(0.0).scale(1.0).epsilon(1e-5));

  const TimeGrid g = make_grid(1.0, 16);
  const SimulationBundle b = simulate_bundle_under_Q(one_asset(RiskModel(kOu)), g, 500, SeedSpec{1});
  CHECK_FALSE(resolve_truncation({}, b).active());
  const Truncation abs = resolve_truncation({TruncationRequest::Mode::absolute, 3.0}, b);
  CHECK(abs.k_theta == 3.0);
  CHECK(abs.k_z == 3.0);
  const Truncation mult = resolve_truncation({TruncationRequest::Mode::multiple, 8.0}, b);
  CHECK(mult.k_theta > 0.0);
  CHECK(mult.k_z > 8.0 * 0.5);
  CHECK(TruncationRequest{TruncationRequest::Mode::multiple, 8.0}.describe() == "8x");
}

TEST_CASE("derivative weights and the functional L") {
  const TimeGrid g = make_grid(1.0, 256);
  const SimulationBundle b = simulate_bundle_under_Q(one_asset(RiskModel(kOu)), g, 20, SeedSpec{2});
  const MuDerivativeWeights lw = mu_weights(1.0, b, UtilityModel::log());
  for (double v : lw.c1.values()) CHECK(v == 0.0);
  for (double v : lw.c2.values()) CHECK(v == 0.0);

  const UtilityModel u = UtilityModel::power(0.5);
  const RiskModel risk(kOu);
  const PathView v = b.view(0);
  std::vector<double> v1(g.n_nodes()), v2(g.n_nodes()), zero(g.n_nodes(), 0.0);
  for (std::size_t k = 0; k < g.n_nodes(); ++k) {
    v1[k] = v.z(k) * std::sin(3.14159 * g.time(k));
    v2[k] = g.time(k) * (1.0 - g.time(k));
  }
  const std::vector<double> eps{1e-2, 1e-3, 1e-4};
  const FdReport rz = functional_L_fd_check(1.0, u, risk, g, v.Z, v.W, v1, zero, eps);
  const FdReport rw = functional_L_fd_check(1.0, u, risk, g, v.Z, v.W, zero, v2, eps);
  CHECK(rz.slope == doctest::Approx(2.0).epsilon(0.15));
  CHECK(rw.slope == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("variational flow of the risk functional") {
  const TimeGrid g = make_grid(1.0, 64);
  const Phi2Block c = solve_phi2(10, RiskModel(ConstantRisk{{0.4}}), g);
  for (std::size_t k = 10; k < g.n_nodes(); ++k) {
    CHECK(c.phi_at(1, k, 0) == 1.0);
    CHECK(c.kappa_at(1, k, 0) == 0.0);
  }

  // phi' = -v phi + v beta int_s^t e^{beta(u-t)} phi du, phi(s) = 1, via the 2x2 matrix exponential
  const double oracle_t1 = 0.83212272, oracle_t05 = 0.88970287;
  const RiskModel ou(kOu);
  auto at = [&](std::size_t n, double t) {
    const TimeGrid gg = make_grid(1.0, n);
    return solve_phi2(0, ou, gg).phi_at(1, gg.nearest_node(t), 0);
  };
  CHECK(at(4096, 1.0) == doctest::Approx(oracle_t1).epsilon(1e-3));
  CHECK(at(4096, 0.5) == doctest::Approx(oracle_t05).epsilon(1e-3));
  // first order self-convergence
  const double ref = at(8192, 1.0);
  const double ratio = std::abs(at(256, 1.0) - ref) / std::abs(at(512, 1.0) - ref);
  CHECK(ratio > 1.6);
  CHECK(ratio < 2.6);

  const GronwallReport gr = check_gronwall(ou, make_grid(1.0, 128));
  CHECK(gr.ok);
  CHECK(gr.K == doctest::Approx(0.6));
}

TEST_CASE("state flow") {
  const TimeGrid g = make_grid(1.0, 32);
  const MarketModel flat = one_asset(RiskModel(ConstantRisk{{0.0}}));
  const SimulationBundle b0 = simulate_bundle_under_Q(flat, g, 10, SeedSpec{3});
  const Phi1Block f0 = solve_phi1(4, b0, solve_phi2(4, flat.risk(), g));
  for (std::size_t p = 0; p < 10; ++p) {
    for (std::size_t k = 4; k < g.n_nodes(); ++k) {
      CHECK(f0.at(p, 0, k) == 1.0);
      CHECK(f0.at(p, 1, k) == 0.0);
    }
  }

  const MarketModel m = one_asset(RiskModel(kOu));
  const SimulationBundle b = simulate_bundle_under_Q(m, g, 10, SeedSpec{3});
  const Phi2Block p2 = solve_phi2(5, m.risk(), g);
  const Phi1Block cf = phi1_closed_form(5, b, p2);
  for (std::size_t k = 5; k < g.n_nodes(); ++k) CHECK(cf.at(2, 0, k) == doctest::Approx(b.Z(2, k) / b.Z(2, 5)));
}

TEST_CASE("lambda") {
  const TimeGrid g = make_grid(1.0, 32);
  const MarketModel m = one_asset(RiskModel(kOu));
  const SimulationBundle b = simulate_bundle_under_Q(m, g, 40, SeedSpec{4});

  const PathEnsemble zero = lambda_all(1.0, b, UtilityModel::log(), m.risk());
  for (double v : zero.values()) CHECK(v == 0.0);
  CHECK(LambdaEngine(1.0, UtilityModel::log(), m.risk(), g).trivially_zero());

  const UtilityModel u = UtilityModel::power(0.5);
  const PathEnsemble lam = lambda_all(1.0, b, u, m.risk());
  for (std::size_t p = 0; p < b.n_paths(); ++p) CHECK(lam(p, g.n_steps()) == 0.0);

  // fast engine against the direct flow quadrature
  const MuDerivativeWeights w = mu_weights(1.0, b, u);
  for (std::size_t t : {std::size_t{0}, std::size_t{7}, std::size_t{20}}) {
    const Phi2Block p2 = solve_phi2(t, m.risk(), g);
    const Phi1Block p1 = phi1_closed_form(t, b, p2);
    const std::vector<double> row = lambda_row(t, b, p2, p1, w);
    for (std::size_t p = 0; p < b.n_paths(); ++p) {
      CHECK(lam(p, t) == doctest::Approx(row[p]).epsilon(1e-10));
    }
  }
}

TEST_CASE("beta regression and hedging holdings") {
  const TimeGrid g = make_grid(1.0, 16);
  const MarketModel m = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const SimulationBundle b = simulate_bundle_under_Q(m, g, 200, SeedSpec{5});
  const PathEnsemble zero(g, 1, 200, Measure::QTilde);
  const BetaEstimate e = estimate_beta(zero, b, RegressionSpec{}, 1.0, UtilityModel::power(0.5));
  for (double v : e.beta.values()) CHECK(std::abs(v) <= 1e-14);
  const StrategyPath pb = hedging_portfolio(e.beta, b, m);
  for (double v : pb.units.values()) CHECK(std::abs(v) <= 1e-14);

  const std::vector<double> beta{0.3}, s{1.5};
  std::vector<double> out(1);
  hedging_units_from_beta(m, beta, s, out);
  CHECK(out[0] == doctest::Approx(0.3 / (1.5 * 0.2)));
}

TEST_CASE("budget split") {
  const TimeGrid g = make_grid(1.0, 64);
  const MarketModel m = one_asset(RiskModel(kOu));
  const SimulationBundle b = simulate_bundle_under_Q(m, g, 4000, SeedSpec{6});

  const XStarResult lg = solve_xstar(1.7, b, UtilityModel::log());
  CHECK(lg.exact);
  CHECK(lg.xstar == 1.7);

  // F is constant for exponential utility, so x* = x - E-tilde V
  const UtilityModel ex = UtilityModel::exponential(1.0);
  const XStarResult xe = solve_xstar(1.0, b, ex);
  CHECK(xe.xstar == doctest::Approx(1.0 - expected_correction(1.0, b, ex).mean).epsilon(1e-8));

  const UtilityModel pw = UtilityModel::power(0.5);
  const XStarResult xp = solve_xstar(1.0, b, pw);
  const double c = expected_correction(1.0, b, pw).mean;
  CHECK(xp.xstar == doctest::Approx(1.0 / (1.0 + c)).epsilon(1e-8));
  CHECK(std::abs(xp.h_at_root) <= 1e-8);
}

TEST_CASE("hedge pipeline") {
  const TimeGrid g = make_grid(1.0, 64);
  const UtilityModel u = UtilityModel::power(0.5);
  const MarketModel c = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const SimulationBundle bc = simulate_bundle_under_Q(c, g, 5000, SeedSpec{7});
  const HedgeResult hc = run_hedge(1.0, c, u, bc, HedgeSpec{});
  CHECK(hc.residual_ratio <= 0.05);
  CHECK(hc.beta_mean.size() == g.n_nodes());
  CHECK(hc.ev.n == 5000);

  const HedgeResult hl = run_hedge(1.0, c, UtilityModel::log(), bc, HedgeSpec{});
  CHECK(hl.short_circuited);
  CHECK(hl.residual_ratio == 0.0);

  // degree 0 cannot follow the theta dependence of the OU conditional mean
  const MarketModel o = one_asset(RiskModel(kOu));
  const SimulationBundle bo = simulate_bundle_under_Q(o, g, 5000, SeedSpec{8});
  HedgeSpec d0, d3;
  d0.regression.degree = 0;
  const double r0 = run_hedge(1.0, o, u, bo, d0).residual_ratio;
  const double r3 = run_hedge(1.0, o, u, bo, d3).residual_ratio;
  CHECK(r0 > 5.0 * r3);

  // and the raw basis at degree 0 fails even for constant theta
  HedgeSpec raw0;
  raw0.regression.degree = 0;
  raw0.regression.basis = BasisKind::raw;
  CHECK(run_hedge(1.0, c, u, bc, raw0).residual_ratio > 5.0 * hc.residual_ratio);
}

TEST_CASE("decomposition on a small problem") {
  const TimeGrid g = make_grid(1.0, 64);
  const MarketModel c = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const DecompositionReport r = decompose(1.0, c, UtilityModel::power(0.5), g, McBudget{4000, 9}, HedgeSpec{});
  CHECK(r.xstar.xstar < 1.0);
  CHECK(r.terminal_relative_rms < 0.2);
  CHECK(r.test_paths == 4000);
  // the myopic leg is sized at x* but weights are relative to total wealth x
  CHECK(r.myopic_weight.front().mean == doctest::Approx(4.0 * r.xstar.xstar).epsilon(1e-6));
  CHECK(r.conforming);

  const DecompositionReport l = decompose(1.0, c, UtilityModel::log(), g, McBudget{2000, 9}, HedgeSpec{});
  CHECK(l.xstar.xstar == 1.0);
  for (const NodeSummary& s : l.hedge_weight) CHECK(s.mean == 0.0);
}
