#pragma once

// Hedging component: functional-derivative weights, variational flow, lambda,
// the conditional-expectation regression for beta, the hedging portfolio, the
// budget split x* and the full decomposition.

#include <Eigen/Dense>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "portdec/market.hpp"
#include "portdec/myopic.hpp"
#include "portdec/utility.hpp"

namespace portdec {

// ---------------------------------------------------------------- truncation

/// Smooth odd clipping: identity on [-k, k], C1 blend on (k, 2k), constant 1.5k beyond.
double truncate_kappa(double k, double x);

/// Truncation levels applied to theta and Z inside lambda; infinite means off.
struct Truncation {
  double k_theta = std::numeric_limits<double>::infinity();
  double k_z = std::numeric_limits<double>::infinity();

  bool active() const noexcept { return std::isfinite(k_theta) || std::isfinite(k_z); }
  double theta(double v) const { return std::isfinite(k_theta) ? truncate_kappa(k_theta, v) : v; }
  double z(double v) const { return std::isfinite(k_z) ? truncate_kappa(k_z, v) : v; }
};

/// "off", an absolute level, or a multiple of the sample 99.9% quantiles.
struct TruncationRequest {
  enum class Mode { off, absolute, multiple };
  Mode mode = Mode::off;
  double value = 0.0;

  std::string describe() const;
};

/// Resolves a request against the sample quantiles of |theta| and Z.
Truncation resolve_truncation(const TruncationRequest& req, const SimulationBundle& b);

// ------------------------------------------------------- derivative weights

struct MuDerivativeWeights {
  PathEnsemble c1;  // dim 1
  PathEnsemble c2;  // dim n
};

/// c1 = U'(x) F'(U'(x) Z) |theta|^2 and c2 = 2 F(U'(x) Z) theta along one path.
void mu_weights_path(double x, const PathView& path, const UtilityModel& u, const Truncation& trunc,
                     std::span<double> c1, std::span<double> c2);

MuDerivativeWeights mu_weights(double x, const SimulationBundle& b, const UtilityModel& u,
                               const Truncation& trunc = {});

/// L(z, w) = int_0^T F(U'(x) z(u)) |Theta(w)(u)|^2 du, trapezoid.
double functional_L(double x, const UtilityModel& u, const RiskModel& risk, const TimeGrid& grid,
                    std::span<const double> z, std::span<const double> w);

/// Directional derivative int c1 v1 du + int c2^T [Theta'(w) v2] du.
double functional_L_derivative(double x, const UtilityModel& u, const RiskModel& risk,
                               const TimeGrid& grid, std::span<const double> z,
                               std::span<const double> w, std::span<const double> v1,
                               std::span<const double> v2);

/// |L(z + e v1, w + e v2) - L(z, w) - e L'(v1, v2)| over an eps ladder, with its log-log slope.
FdReport functional_L_fd_check(double x, const UtilityModel& u, const RiskModel& risk,
                               const TimeGrid& grid, std::span<const double> z,
                               std::span<const double> w, std::span<const double> v1,
                               std::span<const double> v2, std::span<const double> eps_ladder);

// ----------------------------------------------------------- variational flow

/// Path-independent blocks Phi^{2,j}(t, s) for j = 1..n+1, and kappa_j = [Theta' Phi^{2,j}](t).
///
/// Column 0 is the Z direction (identically zero here), column j >= 1 starts
/// at e_{j-1}. Entries are stored for nodes s..N only.
struct Phi2Block {
  std::size_t anchor = 0;
  std::size_t n = 1;
  std::size_t n_nodes = 0;  // N + 1
  std::vector<double> phi;
  std::vector<double> kappa;

  double phi_at(std::size_t j, std::size_t node, std::size_t d) const {
    return phi[(j * n_nodes + node) * n + d];
  }
  double kappa_at(std::size_t j, std::size_t node, std::size_t d) const {
    return kappa[(j * n_nodes + node) * n + d];
  }
};

/// phi_{k+1} = phi_k - dt [Theta' phi]_k from phi_s = e_{j-1}, phi = 0 before s.
Phi2Block solve_phi2(std::size_t s, const RiskModel& risk, const TimeGrid& grid);

struct GronwallReport {
  bool ok = true;
  double K = 0.0;
  double worst_ratio = 0.0;  // max of sup|Phi2| / e^{K (t - s)}
  std::size_t worst_anchor = 0;
  std::size_t worst_node = 0;
};

/// Checks sup_{s<=v<=t} |Phi^{2,j}(v,s)| <= e^{K (t-s)} at every anchor s and node t.
GronwallReport check_gronwall(const RiskModel& risk, const TimeGrid& grid);

/// Scalar Phi^{1,j}(t, s) per (path, j, node), nodes < s left at zero.
struct Phi1Block {
  std::size_t anchor = 0;
  std::size_t n_paths = 0;
  std::size_t n_cols = 2;  // n + 1
  std::size_t n_nodes = 0;
  std::vector<double> values;

  double at(std::size_t p, std::size_t j, std::size_t node) const {
    return values[(p * n_cols + j) * n_nodes + node];
  }
  double& at(std::size_t p, std::size_t j, std::size_t node) {
    return values[(p * n_cols + j) * n_nodes + node];
  }
};

/// Euler solution of the Phi^{1,j} SDE driven by W-tilde on [s, T].
Phi1Block solve_phi1(std::size_t s, const SimulationBundle& b, const Phi2Block& phi2);

/// Exact linearisation of the discrete Z: Phi^{1,1}(u,s) = Z(u)/Z(s),
/// Phi^{1,j}(u,s) = -Z(u) sum_{r=s}^{u-1} kappa_j(r)^T dW_r for j >= 2.
Phi1Block phi1_closed_form(std::size_t s, const SimulationBundle& b, const Phi2Block& phi2);

/// lambda(t) per path (n values each): trapezoid of mu against Phi(., t), times g(t).
std::vector<double> lambda_row(std::size_t t, const SimulationBundle& b, const Phi2Block& phi2,
                               const Phi1Block& phi1, const MuDerivativeWeights& weights);

/// Fast lambda for all anchors of a path, using the closed-form Phi^1 and the
/// time-homogeneous kappa profile of the implemented kernels.
class LambdaEngine {
 public:
  LambdaEngine(double x, const UtilityModel& u, const RiskModel& risk, const TimeGrid& grid,
               Truncation trunc = {});

  /// True when every weight vanishes identically (log utility).
  bool trivially_zero() const noexcept { return zero_; }
  const Truncation& truncation() const noexcept { return trunc_; }

  /// lambda at every node where anchors[k] is set (all nodes if anchors is empty).
  void lambda_path(const PathView& path, std::span<double> out,
                   const std::vector<char>& anchors = {}) const;

  /// lambda at a single anchor, O(N).
  std::vector<double> lambda_at(const PathView& path, std::size_t node) const;

 private:
  double x_;
  const UtilityModel* u_;
  TimeGrid grid_;
  std::size_t n_;
  Truncation trunc_;
  bool zero_ = false;
  bool kernel_zero_ = false;
  std::vector<double> kappa_;  // (j in 1..n, lag, d), lag-major per column
};

/// lambda per (path, node, n) on a whole bundle.
PathEnsemble lambda_all(double x, const SimulationBundle& b, const UtilityModel& u,
                        const RiskModel& risk, const Truncation& trunc = {},
                        const std::vector<char>& anchors = {});

// ------------------------------------------------------------------ regression

/// scaled: w(Z) * monomials in standardized theta, w = -y I'(y) at y = U'(x) Z, fitted by
///         weighted least squares with row weights 1/w(Z).
/// raw:    monomials in (Z, theta), ordinary least squares.
enum class BasisKind { scaled, raw };

std::string to_string(BasisKind k);

struct RegressionSpec {
  int degree = 3;
  double ridge = 0.0;
  std::size_t stride = 1;
  BasisKind basis = BasisKind::scaled;
};

/// Least-squares fit at one anchor node.
struct NodeFit {
  std::size_t node = 0;
  std::vector<double> mean;  // feature centring, per feature
  std::vector<double> sd;    // zero => feature dropped
  std::vector<std::vector<int>> exponents;
  Eigen::MatrixXd coef;       // basis x n
  Eigen::MatrixXd gram_inv;   // (X^T X + ridge)^{-1}, rows of X weighted for the scaled basis
  std::vector<double> sigma2;  // residual variance per output
  double condition = 1.0;      // of the column-equilibrated design
  double ridge = 0.0;
  std::size_t n_samples = 0;
};

/// Fitted conditional expectation E(lambda(t) | Z(t), theta(t)) on every node.
class BetaModel {
 public:
  BetaModel() = default;
  BetaModel(double x, const UtilityModel& u, RegressionSpec spec, TimeGrid grid, std::size_t n);

  const RegressionSpec& spec() const noexcept { return spec_; }
  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t n() const noexcept { return n_; }
  bool zero() const noexcept { return zero_; }
  void set_zero() { zero_ = true; }

  /// Anchor whose fit is used at node k.
  std::size_t anchor_for(std::size_t node) const;
  bool is_anchor(std::size_t node) const;
  std::vector<char> anchor_mask() const;

  void basis(const NodeFit& fit, double z, std::span<const double> theta, Eigen::VectorXd& out) const;
  void predict(std::size_t node, double z, std::span<const double> theta, std::span<double> out) const;
  /// Standard error of each fitted component at the given state.
  std::vector<double> predict_se(std::size_t node, double z, std::span<const double> theta) const;

  std::vector<NodeFit>& fits() { return fits_; }
  const std::vector<NodeFit>& fits() const { return fits_; }
  double max_condition() const;
  std::size_t auto_ridge_nodes() const;

 private:
  friend BetaModel fit_beta_inplace(PathEnsemble&, const SimulationBundle&, const RegressionSpec&,
                                    double, const UtilityModel&);
  double u1x_ = 1.0;
  const UtilityModel* u_ = nullptr;
  RegressionSpec spec_;
  TimeGrid grid_;
  std::size_t n_ = 1;
  bool zero_ = false;
  std::vector<NodeFit> fits_;  // indexed by node; only anchors are populated
};

/// Fits lambda at every anchor and overwrites it with the fitted beta (in place).
BetaModel fit_beta_inplace(PathEnsemble& lambda, const SimulationBundle& b, const RegressionSpec& spec,
                           double x, const UtilityModel& u);

struct BetaEstimate {
  PathEnsemble beta;
  BetaModel model;
};

BetaEstimate estimate_beta(const PathEnsemble& lambda, const SimulationBundle& b,
                           const RegressionSpec& spec, double x, const UtilityModel& u);

/// pi-bar = diag(1/S) (sigma^T)^{-1} beta.
void hedging_units_from_beta(const MarketModel& model, std::span<const double> beta,
                             std::span<const double> s, std::span<double> out);

StrategyPath hedging_portfolio(const PathEnsemble& beta, const SimulationBundle& b,
                               const MarketModel& model);

// ---------------------------------------------------------------- budget split

struct XStarResult {
  double x = 0.0;
  double xstar = 0.0;
  double h_at_root = 0.0;
  std::size_t iterations = 0;
  MeanEstimate ev;  // E-tilde V_{x*}(T) on the bundle
  bool exact = false;  // h(x) == 0, no search needed
};

/// Root of z + E-tilde V_z(T) - x on [0, 10 x] by bisection with common random numbers.
XStarResult solve_xstar(double x, const SimulationBundle& qbundle, const UtilityModel& u,
                        double rel_tol = 1e-10);

/// E-tilde V_z(T) on a Q-tilde bundle.
MeanEstimate expected_correction(double z, const SimulationBundle& qbundle, const UtilityModel& u);

// ------------------------------------------------------------------ pipelines

struct HedgeSpec {
  RegressionSpec regression;
  TruncationRequest truncation;
};

struct NodeSummary {
  double mean = 0.0;
  double q05 = 0.0;
  double q50 = 0.0;
  double q95 = 0.0;
};

/// Output of fitting beta on a Q-tilde bundle at wealth level x.
struct HedgeResult {
  double x = 0.0;
  Truncation truncation;
  bool auto_truncated = false;
  bool short_circuited = false;  // log utility: lambda never formed
  BetaModel model;
  MeanEstimate ev;             // E-tilde V_x(T)
  double var_v = 0.0;          // Var V_x(T)
  double var_residual = 0.0;   // Var(V - EV - sum beta^T dW-tilde)
  double residual_ratio = 0.0;
  double max_lambda_abs = 0.0;
  double tower_max_z = 0.0;    // max over nodes of |mean beta^T dW-tilde| / se
  std::vector<double> beta_mean;         // per node, first component
  std::vector<double> beta_sd;
  std::vector<double> hedge_amount_mean;  // mean pi-bar S, first asset
  std::vector<double> v_mean;             // mean V_x(t)
  std::size_t n_paths = 0;
};

/// lambda, regression, representation residual and tower check; lambda storage is released.
HedgeResult run_hedge(double x, const MarketModel& model, const UtilityModel& u,
                      const SimulationBundle& qbundle, const HedgeSpec& spec);

struct DecompositionReport {
  double x = 0.0;
  XStarResult xstar;
  HedgeResult hedge;
  double terminal_rms = 0.0;           // RMS of X(T) - I(U'(x*) Z(T))
  double terminal_relative_rms = 0.0;  // divided by RMS of the target
  std::size_t test_paths = 0;
  double eu_combined = 0.0;   // P-expected utility via 1/Z(T) weights
  double eu_myopic_only = 0.0;
  double eu_merton = 0.0;
  std::size_t ruined_combined = 0;
  std::size_t ruined_myopic = 0;
  std::size_t ruined_merton = 0;
  std::vector<NodeSummary> myopic_weight;  // pi-tilde S / X, first asset
  std::vector<NodeSummary> hedge_weight;   // pi-bar S / X, first asset
  std::vector<double> wealth_mean;
  bool conforming = true;
};

/// Fits on `fit_bundle` (Q-tilde), then trades on independent out-of-sample
/// Q-tilde paths test_first_path .. test_first_path + test_paths - 1.
DecompositionReport decompose_on(double x, const MarketModel& model, const UtilityModel& u,
                                 const SimulationBundle& fit_bundle, const HedgeSpec& spec,
                                 const SeedSpec& seeds, std::size_t test_first_path,
                                 std::size_t test_paths, const XStarResult* known_xstar = nullptr);

struct McBudget {
  std::size_t paths = 50000;
  std::uint64_t seed = 0;
};

DecompositionReport decompose(double x, const MarketModel& model, const UtilityModel& u,
                              const TimeGrid& grid, const McBudget& mc, const HedgeSpec& spec);

}  // namespace portdec
