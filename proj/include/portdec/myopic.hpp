#pragma once

// Myopic portfolio, correction process V_x, self-financing wealth and the
// pathwise identities that tie them together.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "portdec/market.hpp"
#include "portdec/utility.hpp"

namespace portdec {

enum class StrategyLabel { myopic, hedging, combined };

std::string to_string(StrategyLabel l);

/// Number of shares held per (path, node, asset).
struct StrategyPath {
  PathEnsemble units;
  StrategyLabel label = StrategyLabel::myopic;
};

struct WealthPath {
  PathEnsemble values;  // dim 1
  double x = 0.0;
};

/// Myopic holdings of one path at node k: (1/S_i) [(sigma^T)^{-1} (-y I'(y)) theta]_i, y = U'(x) Z.
void myopic_units_at(double x, const PathView& path, const MarketModel& model, const UtilityModel& u,
                     std::size_t node, std::span<double> out);

StrategyPath myopic_portfolio(double x, const SimulationBundle& b, const MarketModel& model,
                              const UtilityModel& u);

/// Cumulative trapezoid of F(U'(x) Z(u)) |theta(u)|^2 along one path.
void correction_path(double x, const PathView& path, const UtilityModel& u, std::span<double> out);

/// V_x(T) only.
double correction_terminal(double x, const PathView& path, const UtilityModel& u);

/// V_x per (path, node), dim 1.
PathEnsemble correction_process(double x, const SimulationBundle& b, const UtilityModel& u);

/// X(t_{k+1}) = X(t_k) + pi(t_k)^T (S(t_{k+1}) - S(t_k)).
WealthPath simulate_wealth(double x, const StrategyPath& strategy, const SimulationBundle& b);

/// Wealth of the myopic strategy on one path, without materialising the strategy.
void myopic_wealth_path(double x, const PathView& path, const MarketModel& model,
                        const UtilityModel& u, std::span<double> out);

/// X + V - I(U'(x) Z) at every node of one path.
void eu1_residual_path(double x, const PathView& path, const MarketModel& model, const UtilityModel& u,
                       std::span<double> out);

/// Residual r = X + V - I(U'(x) Z) aggregated per node; mergeable across path chunks.
struct Eu1Residual {
  std::vector<double> sum_sq;  // per node
  std::vector<double> max_abs_node;
  std::size_t n_paths = 0;

  void add_path(std::span<const double> residual);
  void merge(const Eu1Residual& other);
  double rms() const;  // across all paths and nodes
  double max_abs() const;
  double rms_at(std::size_t node) const;
};

Eu1Residual check_identity_eu1(double x, const SimulationBundle& b, const MarketModel& model,
                               const UtilityModel& u);

/// Grid-snapped stopping rule.
struct StoppingRule {
  enum class Kind { fixed_time, theta_hitting };
  Kind kind = Kind::fixed_time;
  double time = 0.0;   // fixed_time
  double level = 0.0;  // theta_hitting: first node with theta_1 >= level, capped at T

  static StoppingRule at(double t) { return {Kind::fixed_time, t, 0.0}; }
  static StoppingRule hitting(double level) { return {Kind::theta_hitting, 0.0, level}; }
  std::string describe() const;
};

/// First node where the rule triggers on this path.
std::size_t stopping_node(const StoppingRule& rule, const PathView& path);

/// Samples Z(tau) X(tau) of the myopic wealth, one per path.
std::vector<double> budget_samples(double x, const SimulationBundle& b, const MarketModel& model,
                                   const UtilityModel& u, const StoppingRule& rule);

MeanEstimate check_budget_martingale(double x, const SimulationBundle& b, const MarketModel& model,
                                     const UtilityModel& u, const StoppingRule& rule);

struct AdmissibilityReport {
  bool ok = true;
  std::size_t violations = 0;
  std::size_t first_path = 0;
  std::size_t first_step = 0;
  double min_value = 0.0;  // min over paths and nodes of X + V
};

/// X + V > 0 at every node on every path for the myopic strategy.
AdmissibilityReport check_admissibility(double x, const SimulationBundle& b, const MarketModel& model,
                                        const UtilityModel& u);

}  // namespace portdec
