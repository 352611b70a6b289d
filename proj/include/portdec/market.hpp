#pragma once

// Market price of risk as a nonanticipative path functional, its Frechet kernel,
// the stochastic exponential Z and P / Q-tilde bundle simulation.

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "portdec/paths.hpp"
#include "portdec/stats.hpp"

namespace portdec {

struct ConstantRisk {
  std::vector<double> theta0;
};

/// Which Brownian motion drives the OU risk premium.
enum class OuDriver { P, QTilde };

/// dU = (alpha - beta U) dt + v dB, theta = U, with B = W (P-driven) or B = W-tilde.
struct OuRisk {
  double alpha = 0.0;
  double beta = 1.0;
  double v = 0.0;
  double u0 = 0.0;
  OuDriver driver = OuDriver::P;

  /// Mean reversion seen by W: beta for a P driver, beta - v for a Q-tilde driver.
  double effective_beta() const noexcept { return driver == OuDriver::P ? beta : beta - v; }
};

/// Signed measure representing [Theta'(y) h](t_node) on the grid.
///
/// [Theta'(y) h](t_node) = atom * h(t_node) + sum_{m <= node} weights[m] * h(t_m).
/// Matrices are dim x dim, row-major; weights already include the quadrature step.
struct FrechetKernel {
  std::size_t node = 0;
  std::size_t dim = 1;
  std::vector<double> atom;
  std::vector<double> weights;

  std::vector<double> apply(std::span<const double> h) const;
  double total_variation() const;
};

/// Result of a Frechet remainder ladder.
struct FdReport {
  std::vector<double> eps;
  std::vector<double> remainder;  // sup-norm remainder per eps
  double slope = 0.0;             // log-log slope; NaN when every remainder is at roundoff
  bool at_roundoff = false;
};

/// The functional Theta-bar: W path -> theta path, plus its derivative.
///
/// For OU the discrete functional is the Euler recursion, started from
/// u0 + v w(0) so that paths not pinned at zero are handled consistently. Its
/// derivative is computed exactly for that recursion, so the Frechet remainder
/// of the affine OU map vanishes to roundoff.
class RiskModel {
 public:
  using Variant = std::variant<ConstantRisk, OuRisk>;

  explicit RiskModel(ConstantRisk c);
  explicit RiskModel(OuRisk ou);

  std::size_t dim() const noexcept { return dim_; }
  bool is_constant() const noexcept { return std::holds_alternative<ConstantRisk>(variant_); }
  const Variant& variant() const noexcept { return variant_; }
  std::string describe() const;

  /// theta[k*dim + i] from w[0..k]; both spans hold (N+1)*dim values.
  void theta_path(const TimeGrid& grid, std::span<const double> w, std::span<double> theta) const;
  std::vector<double> theta_path(const TimeGrid& grid, std::span<const double> w) const;

  /// theta(t_node) from the history w[0..node] only.
  std::vector<double> evaluate(const TimeGrid& grid, std::size_t node,
                               std::span<const double> history) const;

  /// Incremental evaluation, used when W is built step by step under Q-tilde.
  class Stepper {
   public:
    explicit Stepper(const RiskModel& model, double dt);
    std::span<const double> value() const noexcept { return state_; }
    void advance(std::span<const double> dw);

   private:
    const RiskModel* model_;
    double dt_;
    std::vector<double> state_;
  };

  /// Streaming [Theta'(y) gamma](t_k): feed gamma(t_0), gamma(t_1), ... in order.
  class LinearizedStepper {
   public:
    LinearizedStepper(const RiskModel& model, double dt);
    /// Returns [Theta' gamma](t_k) given gamma(t_k); gamma(t_m), m < k, were fed before.
    void apply(std::span<const double> gamma_k, std::span<double> out);

   private:
    const RiskModel* model_;
    double dt_;
    std::vector<double> memory_;
  };

  /// [Theta'(base) gamma] at every node; both inputs hold (N+1)*dim values.
  std::vector<double> frechet_apply(const TimeGrid& grid, std::span<const double> base,
                                    std::span<const double> gamma) const;

  /// Explicit kernel at one node (atom plus node weights).
  FrechetKernel kernel(const TimeGrid& grid, std::span<const double> base, std::size_t node) const;

  /// Both implemented kernels are independent of the base path.
  bool kernel_is_path_independent() const noexcept { return true; }

  /// Uniform total-variation bound K over t <= horizon: 0 (constant), |v|(1 + |beta| T) (OU).
  double kernel_variation_bound(double horizon) const;

  /// Same dynamics restarted from the current value of theta.
  RiskModel restarted(std::span<const double> theta_now) const;

 private:
  Variant variant_;
  std::size_t dim_;
};

/// Closed-form OU solution with a left-endpoint stochastic integral.
///
/// With include_extra_drift the long-run level is alpha/beta + v^2/(2 beta)
/// (the variant we cross-reference); without it the standard OU solution.
std::vector<double> ou_theta_closed_form(const OuRisk& ou, const TimeGrid& grid,
                                         std::span<const double> w, bool include_extra_drift = true);

/// Euler solution of dU = (alpha - beta U) dt + v dW driven by the given W.
std::vector<double> ou_theta_sde(const OuRisk& ou, const TimeGrid& grid, std::span<const double> w);

/// v [gamma(t) - beta int_0^t e^{beta(u-t)} gamma(u) du] with trapezoid quadrature.
std::vector<double> frechet_apply_quadrature(const OuRisk& ou, const TimeGrid& grid,
                                             std::span<const double> gamma);

std::vector<double> frechet_apply(const RiskModel& model, const TimeGrid& grid,
                                  std::span<const double> base, std::span<const double> gamma);

FdReport frechet_fd_check(const RiskModel& model, const TimeGrid& grid,
                          std::span<const double> base, std::span<const double> gamma,
                          std::span<const double> eps_ladder);

/// Z(t_k) = exp(-sum theta^T dW - 1/2 sum |theta|^2 dt), left-endpoint sums.
std::vector<double> stochastic_exponential(const TimeGrid& grid, std::size_t dim,
                                           std::span<const double> theta,
                                           std::span<const double> w, std::size_t path_index = 0);

class MarketModel {
 public:
  /// sigma must be n x n with full rank; s0 positive with n entries; risk.dim() == n.
  MarketModel(Eigen::MatrixXd sigma, std::vector<double> s0, RiskModel risk);

  std::size_t n() const noexcept { return static_cast<std::size_t>(sigma_.rows()); }
  const Eigen::MatrixXd& sigma() const noexcept { return sigma_; }
  /// (sigma^T)^{-1}
  const Eigen::MatrixXd& sigma_inv_t() const noexcept { return sigma_inv_t_; }
  double condition_number() const noexcept { return condition_; }
  const std::vector<double>& s0() const noexcept { return s0_; }
  const RiskModel& risk() const noexcept { return risk_; }

  MarketModel with_state(std::vector<double> s0, std::span<const double> theta_now) const;

 private:
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd sigma_inv_t_;
  double condition_ = 1.0;
  std::vector<double> s0_;
  RiskModel risk_;
};

/// Read-only view of one simulated path; every span is node-major.
struct PathView {
  const TimeGrid* grid = nullptr;
  std::size_t n = 1;
  std::span<const double> W, Wtilde, theta, Z, S;

  double w(std::size_t k, std::size_t d = 0) const { return W[k * n + d]; }
  double wt(std::size_t k, std::size_t d = 0) const { return Wtilde[k * n + d]; }
  double th(std::size_t k, std::size_t d = 0) const { return theta[k * n + d]; }
  double z(std::size_t k) const { return Z[k]; }
  double s(std::size_t k, std::size_t i = 0) const { return S[k * n + i]; }
  double theta_sq(std::size_t k) const {
    double r = 0.0;
    for (std::size_t d = 0; d < n; ++d) r += th(k, d) * th(k, d);
    return r;
  }
};

/// Owned storage for a single path, used by streaming studies.
struct PathSample {
  std::vector<double> W, Wtilde, theta, Z, S;

  PathSample() = default;
  PathSample(const TimeGrid& grid, std::size_t n);
  PathView view(const TimeGrid& grid, std::size_t n) const;
};

/// Given W (P-Brownian) in out.W, fills theta, Z, W-tilde and S.
void complete_path_under_P(const MarketModel& model, const TimeGrid& grid, PathSample& out,
                           std::size_t path_index = 0);

/// Given W-tilde in out.Wtilde, solves dW = dW-tilde - Theta(W) dt and fills the rest.
void complete_path_under_Q(const MarketModel& model, const TimeGrid& grid, PathSample& out,
                           std::size_t path_index = 0);

/// Jointly simulated W, W-tilde, theta, Z and S on one grid.
struct SimulationBundle {
  TimeGrid grid;
  Measure simulated_under = Measure::P;
  PathEnsemble W;
  PathEnsemble Wtilde;
  PathEnsemble theta;
  PathEnsemble Z;
  PathEnsemble S;

  std::size_t n_paths() const noexcept { return W.n_paths(); }
  std::size_t n_assets() const noexcept { return S.dim(); }
  PathView view(std::size_t p) const {
    return {&grid, S.dim(), W.path(p), Wtilde.path(p), theta.path(p), Z.path(p), S.path(p)};
  }
};

/// Bundle from P-Brownian paths W.
SimulationBundle build_bundle_under_P(const MarketModel& model, PathEnsemble W);

/// Bundle from Q-tilde-Brownian paths; W solves dW = dW-tilde - Theta(W) dt by Euler.
SimulationBundle build_bundle_under_Q(const MarketModel& model, PathEnsemble Wtilde);

SimulationBundle simulate_bundle_under_P(const MarketModel& model, const TimeGrid& grid,
                                         std::size_t n_paths, const SeedSpec& seeds,
                                         std::size_t first_path = 0);
SimulationBundle simulate_bundle_under_Q(const MarketModel& model, const TimeGrid& grid,
                                         std::size_t n_paths, const SeedSpec& seeds,
                                         std::size_t first_path = 0);

/// Q-tilde expectation of a payoff sampled under P: mean of Z(T) * payoff.
MeanEstimate q_expectation(std::span<const double> payoff, std::span<const double> z_terminal);

/// Values at the last node, one per path, for component d.
std::vector<double> terminal_values(const PathEnsemble& e, std::size_t d = 0);

}  // namespace portdec
