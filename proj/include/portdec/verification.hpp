#pragma once

// Independent oracles and refinement studies behind `verify` and the acceptance suite.
// Every study streams paths in fixed-size chunks and reduces in path order, so results
// do not depend on the thread count.

#include <cstddef>
#include <string>
#include <vector>

#include "portdec/config.hpp"
#include "portdec/hedging.hpp"
#include "portdec/myopic.hpp"
#include "portdec/report.hpp"

namespace portdec {

/// One pass/fail line of a verification table.
struct Check {
  std::string id;
  std::string title;
  bool pass = false;
  std::string detail;
  Json metrics = Json::object();
};

Json to_json(const Check& c);

// ------------------------------------------------------------ eu1 refinement

/// RMS of X + V - I(U'(x) Z) for the myopic strategy on a dt ladder that shares
/// one fine Brownian path per sample (coarser levels are subsamples of it).
struct Eu1Refinement {
  std::vector<std::size_t> steps;  // coarse to fine
  std::vector<double> dt;
  std::vector<double> rms;      // over all paths and nodes
  std::vector<double> max_abs;
  std::vector<double> factors;  // rms[i] / rms[i+1]
  double slope = 0.0;           // log-log slope of rms against dt
  std::size_t n_paths = 0;
  std::vector<double> finest_rms_per_node;
};

/// `steps` ascending, each dividing the last; the last level carries the Brownian draws.
Eu1Refinement eu1_refinement(const MarketModel& model, const UtilityModel& u, double x, double horizon,
                             const std::vector<std::size_t>& steps, std::size_t n_paths, const SeedSpec& seeds);

/// finest, finest/2, ... with `levels` entries, ascending.
std::vector<std::size_t> halving_ladder(std::size_t finest_steps, std::size_t levels);

// --------------------------------------------------------- budget martingale

struct BudgetResult {
  StoppingRule rule;
  MeanEstimate estimate;
  double z = 0.0;  // |mean - x| / se
};

/// Theta level used by the capped hitting-time rule: theta_1(0) + 0.1.
double default_hitting_level(const MarketModel& model, const TimeGrid& grid);

/// E_P[Z(tau) X(tau)] for the myopic strategy, streamed under P.
std::vector<BudgetResult> budget_study(const MarketModel& model, const UtilityModel& u, double x,
                                       const TimeGrid& grid, std::size_t n_paths, const SeedSpec& seeds,
                                       const std::vector<StoppingRule>& rules);

// ------------------------------------------------------- variational flow

/// Euler Phi^{1,1}(., s) against Z(.)/Z(s) on a dt ladder with shared Q-tilde paths.
struct Phi1Refinement {
  std::vector<std::size_t> steps;
  std::vector<double> dt;
  std::vector<double> rms_error;  // over paths, anchors and nodes >= anchor
  std::vector<double> factors;
  std::vector<double> rms_error_cols;  // j >= 2 columns, Euler vs closed form, finest level
};

Phi1Refinement phi1_refinement(const MarketModel& model, double horizon, const std::vector<std::size_t>& steps,
                               std::size_t n_paths, const SeedSpec& seeds);

// ------------------------------------------------------------- FD oracles

struct FdOracles {
  FdReport frechet;  // theta functional along a Brownian direction
  FdReport l_z;      // L along (v1, 0)
  FdReport l_w;      // L along (0, v2)
  FdReport l_joint;  // L along (v1, v2)
};

FdOracles fd_oracles(const MarketModel& model, const UtilityModel& u, double x, const TimeGrid& grid,
                     const SeedSpec& seeds);

/// Slope in range, or every remainder at roundoff.
bool fd_slope_ok(const FdReport& r);

// ------------------------------------------------------------ log utility

struct LogDegeneracy {
  double max_abs_F = 0.0;       // over 1000 log-spaced z
  double max_abs_V = 0.0;       // over the bundle
  double max_abs_lambda = 0.0;  // raw lambda through the engine
  double max_abs_beta = 0.0;
  double max_abs_pi_bar = 0.0;
  double max_weight_dev = 0.0;  // |pi-tilde_i S_i / I(U'(x) Z) - zeta_i|
  bool short_circuited = false;
  bool xstar_exact = false;
  double xstar = 0.0;
};

LogDegeneracy log_degeneracy(const MarketModel& model, const UtilityModel& u, double x,
                             const SimulationBundle& qbundle, const HedgeSpec& spec);

// ----------------------------------------------------------------- hedging

/// Closed-form beta for constant theta and power utility:
/// beta(t) = -k q theta Z^q int_t^T exp(q(q+1)|theta|^2 (u-t)/2) du, k = x p |theta|^2 / (2 (p-1)^2).
std::vector<double> constant_crra_beta(const UtilityModel& u, double x, std::span<const double> theta,
                                       double z, double tau);

struct BetaOracle {
  double rel_rmse = 0.0;
  std::size_t samples = 0;
  std::vector<double> oracle_mean;  // per node, first component
};

BetaOracle beta_oracle_constant_crra(const HedgeResult& h, const SimulationBundle& qbundle,
                                     const MarketModel& model, const UtilityModel& u, double x);

struct XStarCheck {
  XStarResult result;
  std::string reference;  // "closed_form", "exact", "shift"
  double expected = 0.0;
  double tolerance = 0.0;
  double difference = 0.0;
  bool pass = false;
};

/// Bisection against the utility-specific reference, using the same samples.
XStarCheck xstar_check(double x, const SimulationBundle& qbundle, const UtilityModel& u);

struct NestedProbe {
  std::size_t node = 0;
  std::size_t path = 0;
  double z = 0.0, theta = 0.0;
  double predicted = 0.0, predicted_se = 0.0;
  double nested = 0.0, nested_se = 0.0;
  double score = 0.0;  // |diff| / combined se
};

/// Nested Monte Carlo of E-tilde[lambda(t) | F_t] at fixed states, restarting theta
/// and scaling Z by the state value; compares the first component with beta-hat.
std::vector<NestedProbe> nested_mc_check(double x, const MarketModel& model, const UtilityModel& u,
                                         const SimulationBundle& qbundle, const HedgeResult& h,
                                         std::size_t n_nodes, std::size_t states, std::size_t inner,
                                         const SeedSpec& seeds);

struct TruncationLadder {
  std::vector<double> multiples;
  std::vector<double> k_theta, k_z;
  std::vector<double> terminal_relative_rms;
  std::vector<double> eu_combined;
  std::vector<std::vector<double>> beta_mean;
  std::vector<double> max_rel_diff;  // per successive pair
  bool pass = false;
};

/// Decomposition outputs for each truncation multiple on one bundle and one test set.
TruncationLadder truncation_ladder(double x, const MarketModel& model, const UtilityModel& u,
                                   const SimulationBundle& qbundle, HedgeSpec spec, const SeedSpec& seeds,
                                   std::size_t test_first_path, std::size_t test_paths,
                                   const std::vector<double>& multiples, const XStarResult* known_xstar = nullptr);

// ------------------------------------------------------- convergence studies

struct Ladder {
  enum class Kind { dt_halvings, basis_degrees, truncation_levels, path_doublings };
  Kind kind = Kind::dt_halvings;
  std::vector<double> values;  // n_steps per level, degrees, truncation multiples or path counts
};

struct SlopeTable {
  std::string parameter;
  std::string metric;
  std::vector<double> params;
  std::vector<double> values;
  double slope = 0.0;  // log-log, over strictly positive entries
};

Json to_json(const SlopeTable& t);

SlopeTable convergence_study(const RunConfig& config, const Ladder& ladder);

}  // namespace portdec
