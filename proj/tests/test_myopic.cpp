#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "portdec/myopic.hpp"

using namespace portdec;

namespace {

MarketModel one_asset(RiskModel risk) {
  return MarketModel(Eigen::MatrixXd::Constant(1, 1, 0.2), {1.0}, std::move(risk));
}

const OuRisk kOu{0.5, 1.0, 0.3, 0.2, OuDriver::P};

}  // namespace

TEST_CASE("log myopic weights are the merton proportion") {
  const TimeGrid g = make_grid(1.0, 64);
  const MarketModel m = one_asset(RiskModel(kOu));
  const UtilityModel u = UtilityModel::log();
  const SimulationBundle b = simulate_bundle_under_P(m, g, 200, SeedSpec{1});
  double worst = 0.0;
  std::vector<double> units(1);
  for (std::size_t p = 0; p < b.n_paths(); ++p) {
    const PathView v = b.view(p);
    for (std::size_t k = 0; k < g.n_nodes(); ++k) {
      myopic_units_at(1.0, v, m, u, k, units);
      const double w = units[0] * v.s(k) / u.I(u.U1(1.0) * v.z(k));
      worst = std::max(worst, std::abs(w - v.th(k) / 0.2));
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("myopic holdings in simple cases") {
  const TimeGrid g = make_grid(1.0, 16);
  const MarketModel flat = one_asset(RiskModel(ConstantRisk{{0.0}}));
  const SimulationBundle b0 = simulate_bundle_under_P(flat, g, 20, SeedSpec{2});
  const StrategyPath s0 = myopic_portfolio(1.0, b0, flat, UtilityModel::power(0.5));
  for (double v : s0.units.values()) CHECK(v == 0.0);
  const PathEnsemble v0 = correction_process(1.0, b0, UtilityModel::power(0.5));
  for (double v : v0.values()) CHECK(v == 0.0);

  // theta / (sigma (1 - p)) = 0.4 / (0.2 * 0.5)
  const MarketModel m = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const SimulationBundle b = simulate_bundle_under_P(m, g, 5, SeedSpec{2});
  std::vector<double> units(1);
  myopic_units_at(1.0, b.view(0), m, UtilityModel::power(0.5), 0, units);
  CHECK(units[0] * 1.0 / 1.0 == doctest::Approx(4.0).epsilon(1e-14));

  const PathEnsemble vl = correction_process(1.0, b, UtilityModel::log());
  for (double v : vl.values()) CHECK(v == 0.0);
}

TEST_CASE("expected correction for power utility and constant theta") {
  // E-tilde V_x(T) = x theta^2 int_0^1 exp(q (q + 1) theta^2 u / 2) du = e^{0.16} - 1
  const double oracle = 0.17351087099181026;
  const TimeGrid g = make_grid(1.0, 128);
  const MarketModel m = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const SimulationBundle q = simulate_bundle_under_Q(m, g, 50000, SeedSpec{3});
  std::vector<double> vt(q.n_paths());
  for (std::size_t p = 0; p < q.n_paths(); ++p) vt[p] = correction_terminal(1.0, q.view(p), UtilityModel::power(0.5));
  CHECK(mean_estimate(vt).z_score(oracle) <= 3.0);

  std::vector<double> path(g.n_nodes());
  correction_path(1.0, q.view(0), UtilityModel::power(0.5), path);
  CHECK(path[0] == 0.0);
  CHECK(path.back() == doctest::Approx(vt[0]).epsilon(1e-14));
}

TEST_CASE("self-financing wealth") {
  const TimeGrid g = make_grid(1.0, 32);
  const MarketModel m = one_asset(RiskModel(kOu));
  const SimulationBundle b = simulate_bundle_under_P(m, g, 10, SeedSpec{4});
  StrategyPath zero{PathEnsemble(g, 1, 10), StrategyLabel::myopic};
  const WealthPath flat = simulate_wealth(2.0, zero, b);
  for (double v : flat.values.values()) CHECK(v == 2.0);

  StrategyPath one{PathEnsemble(g, 1, 10), StrategyLabel::hedging};
  for (double& v : one.units.values()) v = 1.0;
  const WealthPath w = simulate_wealth(2.0, one, b);
  for (std::size_t p = 0; p < 10; ++p) {
    for (std::size_t k = 0; k < g.n_nodes(); ++k) {
      CHECK(w.values(p, k) == doctest::Approx(2.0 + b.S(p, k) - 1.0).epsilon(1e-13));
    }
  }

  // streamed and materialised myopic wealth agree
  const UtilityModel u = UtilityModel::power(0.5);
  const WealthPath full = simulate_wealth(1.0, myopic_portfolio(1.0, b, m, u), b);
  std::vector<double> streamed(g.n_nodes());
  myopic_wealth_path(1.0, b.view(3), m, u, streamed);
  for (std::size_t k = 0; k < g.n_nodes(); ++k) CHECK(streamed[k] == doctest::Approx(full.values(3, k)).epsilon(1e-13));
}

TEST_CASE("eu1 residual starts at zero") {
  const TimeGrid g = make_grid(1.0, 32);
  const MarketModel m = one_asset(RiskModel(kOu));
  const SimulationBundle b = simulate_bundle_under_P(m, g, 50, SeedSpec{5});
  for (const UtilityModel& u : {UtilityModel::log(), UtilityModel::power(0.5), UtilityModel::power(-1.0)}) {
    const Eu1Residual r = check_identity_eu1(1.3, b, m, u);
    CHECK(r.rms_at(0) == 0.0);
    CHECK(r.n_paths == 50);
    CHECK(r.rms() > 0.0);
  }
}

TEST_CASE("budget martingale under stopping rules") {
  const TimeGrid g = make_grid(1.0, 64);
  const UtilityModel u = UtilityModel::power(0.5);
  const MarketModel c = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const SimulationBundle bc = simulate_bundle_under_P(c, g, 100000, SeedSpec{6});
  const std::vector<double> at0 = budget_samples(1.0, bc, c, u, StoppingRule::at(0.0));
  for (double v : at0) CHECK(v == 1.0);
  CHECK(check_budget_martingale(1.0, bc, c, u, StoppingRule::at(1.0)).z_score(1.0) <= 3.0);

  const MarketModel o = one_asset(RiskModel(kOu));
  const SimulationBundle bo = simulate_bundle_under_P(o, g, 100000, SeedSpec{7});
  const StoppingRule hit = StoppingRule::hitting(0.3);
  CHECK(check_budget_martingale(1.0, bo, o, u, hit).z_score(1.0) <= 3.0);
  CHECK(stopping_node(StoppingRule::hitting(-10.0), bo.view(0)) == 0);
  CHECK(stopping_node(StoppingRule::hitting(10.0), bo.view(0)) == g.n_steps());
}

TEST_CASE("admissibility of the myopic strategy") {
  const TimeGrid g = make_grid(1.0, 256);
  const MarketModel m = one_asset(RiskModel(ConstantRisk{{0.4}}));
  const SimulationBundle b = simulate_bundle_under_P(m, g, 2000, SeedSpec{8});
  const AdmissibilityReport r = check_admissibility(1.0, b, m, UtilityModel::log());
  CHECK(r.ok);
  CHECK(r.min_value > 0.0);
}
