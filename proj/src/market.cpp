#include "portdec/market.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "portdec/parallel.hpp"

namespace portdec {

namespace {

void check_ou(const OuRisk& ou) {
  if (!(ou.beta > 0.0) || !std::isfinite(ou.beta)) {
    throw std::invalid_argument("OU model: beta must be positive");
  }
  if (!std::isfinite(ou.alpha) || !std::isfinite(ou.v) || !std::isfinite(ou.u0)) {
    throw std::invalid_argument("OU model: parameters must be finite");
  }
}

void check_path_size(const TimeGrid& grid, std::size_t dim, std::size_t size, const char* what) {
  if (size != grid.n_nodes() * dim) {
    throw std::invalid_argument(std::string(what) + ": path does not match the grid");
  }
}

}  // namespace

std::vector<double> FrechetKernel::apply(std::span<const double> h) const {
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      out[i] += atom[i * dim + j] * h[node * dim + j];
    }
  }
  for (std::size_t m = 0; m <= node; ++m) {
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        out[i] += weights[(m * dim + i) * dim + j] * h[m * dim + j];
      }
    }
  }
  return out;
}

double FrechetKernel::total_variation() const {
  // max row sum over output components, atoms and weights together
  double best = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < dim; ++j) row += std::abs(atom[i * dim + j]);
    for (std::size_t m = 0; m <= node; ++m) {
      for (std::size_t j = 0; j < dim; ++j) row += std::abs(weights[(m * dim + i) * dim + j]);
    }
    best = std::max(best, row);
  }
  return best;
}

RiskModel::RiskModel(ConstantRisk c) : variant_(std::move(c)) {
  const auto& th = std::get<ConstantRisk>(variant_).theta0;
  if (th.empty()) throw std::invalid_argument("constant model: theta must be non-empty");
  for (double x : th) {
    if (!std::isfinite(x)) throw std::invalid_argument("constant model: theta must be finite");
  }
  dim_ = th.size();
}

RiskModel::RiskModel(OuRisk ou) : variant_(ou), dim_(1) { check_ou(ou); }

std::string RiskModel::describe() const {
  std::ostringstream os;
  if (const auto* c = std::get_if<ConstantRisk>(&variant_)) {
    os << "constant(";
    for (std::size_t i = 0; i < c->theta0.size(); ++i) os << (i ? "," : "") << c->theta0[i];
    os << ")";
  } else {
    const auto& ou = std::get<OuRisk>(variant_);
    os << "ou(alpha=" << ou.alpha << ",beta=" << ou.beta << ",v=" << ou.v << ",u0=" << ou.u0
       << ",driver=" << (ou.driver == OuDriver::P ? "P" : "Q") << ")";
  }
  return os.str();
}

void RiskModel::theta_path(const TimeGrid& grid, std::span<const double> w,
                           std::span<double> theta) const {
  check_path_size(grid, dim_, w.size(), "theta_path");
  check_path_size(grid, dim_, theta.size(), "theta_path");
  const std::size_t nn = grid.n_nodes();
  if (const auto* c = std::get_if<ConstantRisk>(&variant_)) {
    for (std::size_t k = 0; k < nn; ++k) {
      std::copy(c->theta0.begin(), c->theta0.end(), theta.begin() + k * dim_);
    }
    return;
  }
  const auto& ou = std::get<OuRisk>(variant_);
  const double dt = grid.dt();
  const double b = ou.effective_beta();
  double u = ou.u0 + ou.v * w[0];
  theta[0] = u;
  for (std::size_t k = 0; k + 1 < nn; ++k) {
    u += (ou.alpha - b * u) * dt + ou.v * (w[k + 1] - w[k]);
    theta[k + 1] = u;
  }
  if (!std::isfinite(u)) throw NumericError("theta_path: non-finite OU state", 0, grid.n_steps());
}

std::vector<double> RiskModel::theta_path(const TimeGrid& grid, std::span<const double> w) const {
  std::vector<double> out(grid.n_nodes() * dim_);
  theta_path(grid, w, out);
  return out;
}

std::vector<double> RiskModel::evaluate(const TimeGrid& grid, std::size_t node,
                                        std::span<const double> history) const {
  if (node >= grid.n_nodes() || history.size() < (node + 1) * dim_) {
    throw std::invalid_argument("evaluate: history shorter than the requested node");
  }
  if (const auto* c = std::get_if<ConstantRisk>(&variant_)) return c->theta0;
  const auto& ou = std::get<OuRisk>(variant_);
  const double b = ou.effective_beta();
  double u = ou.u0 + ou.v * history[0];
  for (std::size_t k = 0; k < node; ++k) {
    u += (ou.alpha - b * u) * grid.dt() + ou.v * (history[k + 1] - history[k]);
  }
  return {u};
}

RiskModel::Stepper::Stepper(const RiskModel& model, double dt) : model_(&model), dt_(dt) {
  if (const auto* c = std::get_if<ConstantRisk>(&model.variant_)) {
    state_ = c->theta0;
  } else {
    state_ = {std::get<OuRisk>(model.variant_).u0};
  }
}

void RiskModel::Stepper::advance(std::span<const double> dw) {
  if (const auto* ou = std::get_if<OuRisk>(&model_->variant_)) {
    state_[0] += (ou->alpha - ou->effective_beta() * state_[0]) * dt_ + ou->v * dw[0];
  }
}

RiskModel::LinearizedStepper::LinearizedStepper(const RiskModel& model, double dt)
    : model_(&model), dt_(dt), memory_(model.dim(), 0.0) {}

void RiskModel::LinearizedStepper::apply(std::span<const double> gamma_k, std::span<double> out) {
  const auto* ou = std::get_if<OuRisk>(&model_->variant_);
  if (!ou) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const double b = ou->effective_beta();
  out[0] = ou->v * gamma_k[0] + memory_[0];
  memory_[0] = (1.0 - b * dt_) * memory_[0] - ou->v * b * dt_ * gamma_k[0];
}

std::vector<double> RiskModel::frechet_apply(const TimeGrid& grid, std::span<const double> base,
                                             std::span<const double> gamma) const {
  check_path_size(grid, dim_, base.size(), "frechet_apply");
  check_path_size(grid, dim_, gamma.size(), "frechet_apply");
  std::vector<double> out(gamma.size(), 0.0);
  LinearizedStepper lin(*this, grid.dt());
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
    lin.apply(gamma.subspan(k * dim_, dim_), std::span<double>(out).subspan(k * dim_, dim_));
  }
  return out;
}

FrechetKernel RiskModel::kernel(const TimeGrid& grid, std::span<const double> base,
                                std::size_t node) const {
  check_path_size(grid, dim_, base.size(), "kernel");
  if (node >= grid.n_nodes()) throw std::invalid_argument("kernel: node outside the grid");
  FrechetKernel k;
  k.node = node;
  k.dim = dim_;
  k.atom.assign(dim_ * dim_, 0.0);
  k.weights.assign((node + 1) * dim_ * dim_, 0.0);
  if (const auto* ou = std::get_if<OuRisk>(&variant_)) {
    const double b = ou->effective_beta();
    const double dt = grid.dt();
    k.atom[0] = ou->v;
    double decay = 1.0;
    for (std::size_t m = node; m-- > 0;) {
      k.weights[m] = -ou->v * b * dt * decay;
      decay *= 1.0 - b * dt;
    }
  }
  return k;
}

double RiskModel::kernel_variation_bound(double horizon) const {
  const auto* ou = std::get_if<OuRisk>(&variant_);
  if (!ou) return 0.0;
  const double b = ou->effective_beta();
  // the discrete kernel's mass is |v| (1 + |b| dt sum |1 - b dt|^j); this bounds it when b >= 0
  if (b >= 0.0) return std::abs(ou->v) * (1.0 + b * horizon);
  return std::abs(ou->v) * (1.0 + std::abs(b) * horizon * std::exp(std::abs(b) * horizon));
}

RiskModel RiskModel::restarted(std::span<const double> theta_now) const {
  if (const auto* ou = std::get_if<OuRisk>(&variant_)) {
    OuRisk r = *ou;
    r.u0 = theta_now[0];
    return RiskModel(r);
  }
  return *this;
}

std::vector<double> ou_theta_closed_form(const OuRisk& ou, const TimeGrid& grid,
                                         std::span<const double> w, bool include_extra_drift) {
  check_ou(ou);
  check_path_size(grid, 1, w.size(), "ou_theta_closed_form");
  const double level = ou.alpha / ou.beta + (include_extra_drift ? ou.v * ou.v / (2.0 * ou.beta) : 0.0);
  std::vector<double> out(grid.n_nodes());
  double integral = 0.0;  // sum e^{beta t_m} dW_m
  out[0] = ou.u0;
  for (std::size_t k = 1; k < grid.n_nodes(); ++k) {
    integral += std::exp(ou.beta * grid.time(k - 1)) * (w[k] - w[k - 1]);
    const double t = grid.time(k);
    const double e = std::exp(-ou.beta * t);
    out[k] = e * ou.u0 + level * (1.0 - e) + ou.v * e * integral;
  }
  return out;
}

std::vector<double> ou_theta_sde(const OuRisk& ou, const TimeGrid& grid, std::span<const double> w) {
  check_ou(ou);
  check_path_size(grid, 1, w.size(), "ou_theta_sde");
  std::vector<double> out(grid.n_nodes());
  std::vector<double> state{ou.u0};
  out[0] = ou.u0;
  for (std::size_t k = 0; k + 1 < grid.n_nodes(); ++k) {
    const double drift[1] = {ou.alpha - ou.beta * state[0]};
    const double diffusion[1] = {ou.v};
    const double dw[1] = {w[k + 1] - w[k]};
    euler_step_inplace(state, grid.dt(), drift, diffusion, dw, {0, k});
    out[k + 1] = state[0];
  }
  return out;
}

std::vector<double> frechet_apply_quadrature(const OuRisk& ou, const TimeGrid& grid,
                                             std::span<const double> gamma) {
  check_ou(ou);
  check_path_size(grid, 1, gamma.size(), "frechet_apply_quadrature");
  const double dt = grid.dt();
  std::vector<double> out(grid.n_nodes(), 0.0);
  out[0] = ou.v * gamma[0];
  // running trapezoid of e^{beta u} gamma(u), rescaled by e^{-beta t} at each node
  double acc = 0.0;
  for (std::size_t k = 1; k < grid.n_nodes(); ++k) {
    acc += 0.5 * dt *
           (std::exp(ou.beta * grid.time(k - 1)) * gamma[k - 1] +
            std::exp(ou.beta * grid.time(k)) * gamma[k]);
    out[k] = ou.v * (gamma[k] - ou.beta * std::exp(-ou.beta * grid.time(k)) * acc);
  }
  return out;
}

std::vector<double> frechet_apply(const RiskModel& model, const TimeGrid& grid,
                                  std::span<const double> base, std::span<const double> gamma) {
  return model.frechet_apply(grid, base, gamma);
}

FdReport frechet_fd_check(const RiskModel& model, const TimeGrid& grid,
                          std::span<const double> base, std::span<const double> gamma,
                          std::span<const double> eps_ladder) {
  FdReport rep;
  const std::vector<double> th0 = model.theta_path(grid, base);
  const std::vector<double> dth = model.frechet_apply(grid, base, gamma);
  double scale = 1.0;
  for (double x : th0) scale = std::max(scale, std::abs(x));
  std::vector<double> shifted(base.size());
  bool all_roundoff = true;
  for (double eps : eps_ladder) {
    for (std::size_t i = 0; i < base.size(); ++i) shifted[i] = base[i] + eps * gamma[i];
    const std::vector<double> th1 = model.theta_path(grid, shifted);
    double r = 0.0;
    for (std::size_t i = 0; i < th1.size(); ++i) {
      r = std::max(r, std::abs(th1[i] - th0[i] - eps * dth[i]));
    }
    rep.eps.push_back(eps);
    rep.remainder.push_back(r);
    if (r > 1e-12 * scale) all_roundoff = false;
  }
  rep.at_roundoff = all_roundoff;
  if (all_roundoff || rep.eps.size() < 2) {
    rep.slope = std::numeric_limits<double>::quiet_NaN();
  } else {
    rep.slope = loglog_slope(rep.eps, rep.remainder);
  }
  return rep;
}

std::vector<double> stochastic_exponential(const TimeGrid& grid, std::size_t dim,
                                           std::span<const double> theta,
                                           std::span<const double> w, std::size_t path_index) {
  check_path_size(grid, dim, theta.size(), "stochastic_exponential");
  check_path_size(grid, dim, w.size(), "stochastic_exponential");
  const double dt = grid.dt();
  std::vector<double> z(grid.n_nodes());
  z[0] = 1.0;
  double log_z = 0.0;
  for (std::size_t k = 0; k + 1 < grid.n_nodes(); ++k) {
    double inc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double th = theta[k * dim + d];
      inc -= th * (w[(k + 1) * dim + d] - w[k * dim + d]) + 0.5 * th * th * dt;
    }
    log_z += inc;
    z[k + 1] = std::exp(log_z);
    if (!std::isfinite(log_z) || !(z[k + 1] > 0.0) || !std::isfinite(z[k + 1])) {
      throw NumericError("stochastic_exponential: non-finite exponent", path_index, k);
    }
  }
  return z;
}

MarketModel::MarketModel(Eigen::MatrixXd sigma, std::vector<double> s0, RiskModel risk)
    : sigma_(std::move(sigma)), s0_(std::move(s0)), risk_(std::move(risk)) {
  const auto n = static_cast<std::size_t>(sigma_.rows());
  if (n == 0 || sigma_.cols() != sigma_.rows()) {
    throw std::invalid_argument("market: sigma must be a square, non-empty matrix");
  }
  if (s0_.size() != n) throw std::invalid_argument("market: s0 must have one entry per asset");
  if (risk_.dim() != n) throw std::invalid_argument("market: risk model dimension differs from asset count");
  for (double s : s0_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("market: s0 must be positive");
  }
  if (!sigma_.allFinite()) throw std::invalid_argument("market: sigma must be finite");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sigma_);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (!(smin > 1e-14 * smax) || smax == 0.0) {
    throw std::invalid_argument("market: sigma is singular (full rank required)");
  }
  condition_ = smax / smin;
  sigma_inv_t_ = sigma_.transpose().inverse();
}

MarketModel MarketModel::with_state(std::vector<double> s0, std::span<const double> theta_now) const {
  return MarketModel(sigma_, std::move(s0), risk_.restarted(theta_now));
}

namespace {

struct PathSpans {
  std::span<double> W, Wtilde, theta, Z, S;
};

// theta, Z and S from the W path already in place
void fill_from_w(const MarketModel& model, const TimeGrid& grid, const PathSpans& o,
                 std::size_t path_index) {
  const std::size_t n = model.n();
  const std::size_t nn = grid.n_nodes();
  const double dt = grid.dt();
  model.risk().theta_path(grid, o.W, o.theta);
  const std::vector<double> z = stochastic_exponential(grid, n, o.theta, o.W, path_index);
  std::copy(z.begin(), z.end(), o.Z.begin());

  const Eigen::MatrixXd& sig = model.sigma();
  std::vector<double> half_var(n), log_s(n), dwt(n);
  for (std::size_t i = 0; i < n; ++i) {
    half_var[i] = 0.5 * sig.row(static_cast<Eigen::Index>(i)).squaredNorm() * dt;
    log_s[i] = std::log(model.s0()[i]);
    o.S[i] = model.s0()[i];
  }
  // log-Euler in W-tilde: d log S = sigma dW-tilde - 1/2 |sigma_i|^2 dt
  for (std::size_t k = 0; k + 1 < nn; ++k) {
    for (std::size_t d = 0; d < n; ++d) {
      dwt[d] = (o.W[(k + 1) * n + d] - o.W[k * n + d]) + o.theta[k * n + d] * dt;
    }
    for (std::size_t i = 0; i < n; ++i) {
      double inc = -half_var[i];
      for (std::size_t d = 0; d < n; ++d) {
        inc += sig(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) * dwt[d];
      }
      log_s[i] += inc;
      const double v = std::exp(log_s[i]);
      if (!std::isfinite(v) || !(v > 0.0)) throw NumericError("stock price overflow", path_index, k);
      o.S[(k + 1) * n + i] = v;
    }
  }
}

void complete_p(const MarketModel& model, const TimeGrid& grid, const PathSpans& o,
                std::size_t path_index) {
  fill_from_w(model, grid, o, path_index);
  const std::size_t n = model.n();
  const double dt = grid.dt();
  for (std::size_t d = 0; d < n; ++d) {
    double drift = 0.0;
    o.Wtilde[d] = o.W[d];
    for (std::size_t k = 0; k + 1 < grid.n_nodes(); ++k) {
      drift += o.theta[k * n + d] * dt;
      o.Wtilde[(k + 1) * n + d] = o.W[(k + 1) * n + d] + drift;
    }
  }
}

void complete_q(const MarketModel& model, const TimeGrid& grid, const PathSpans& o,
                std::size_t path_index) {
  const std::size_t n = model.n();
  const double dt = grid.dt();
  RiskModel::Stepper st(model.risk(), dt);
  std::vector<double> drift(n), dw(n), dwt(n);
  std::vector<double> identity(n * n, 0.0);
  for (std::size_t d = 0; d < n; ++d) identity[d * n + d] = 1.0;
  std::vector<double> state(o.Wtilde.begin(), o.Wtilde.begin() + static_cast<std::ptrdiff_t>(n));
  std::copy(state.begin(), state.end(), o.W.begin());
  for (std::size_t k = 0; k + 1 < grid.n_nodes(); ++k) {
    // dW = dW-tilde - theta dt
    const auto th_k = st.value();
    for (std::size_t d = 0; d < n; ++d) {
      drift[d] = -th_k[d];
      dwt[d] = o.Wtilde[(k + 1) * n + d] - o.Wtilde[k * n + d];
    }
    euler_step_inplace(state, dt, drift, identity, dwt, {path_index, k});
    for (std::size_t d = 0; d < n; ++d) {
      o.W[(k + 1) * n + d] = state[d];
      dw[d] = o.W[(k + 1) * n + d] - o.W[k * n + d];
    }
    st.advance(dw);
  }
  // theta is then recomputed from the stored W, so it matches theta_path bit for bit
  fill_from_w(model, grid, o, path_index);
}

PathSpans spans_of(PathSample& s) { return {s.W, s.Wtilde, s.theta, s.Z, s.S}; }

PathSpans spans_of(SimulationBundle& b, std::size_t p) {
  return {b.W.path(p), b.Wtilde.path(p), b.theta.path(p), b.Z.path(p), b.S.path(p)};
}

}  // namespace

PathSample::PathSample(const TimeGrid& grid, std::size_t n)
    : W(grid.n_nodes() * n), Wtilde(grid.n_nodes() * n), theta(grid.n_nodes() * n),
      Z(grid.n_nodes()), S(grid.n_nodes() * n) {}

PathView PathSample::view(const TimeGrid& grid, std::size_t n) const {
  return {&grid, n, W, Wtilde, theta, Z, S};
}

void complete_path_under_P(const MarketModel& model, const TimeGrid& grid, PathSample& out,
                           std::size_t path_index) {
  complete_p(model, grid, spans_of(out), path_index);
}

void complete_path_under_Q(const MarketModel& model, const TimeGrid& grid, PathSample& out,
                           std::size_t path_index) {
  complete_q(model, grid, spans_of(out), path_index);
}

SimulationBundle build_bundle_under_P(const MarketModel& model, PathEnsemble W) {
  if (W.dim() != model.n()) throw std::invalid_argument("bundle: W dimension differs from asset count");
  const TimeGrid grid = W.grid();
  const std::size_t n = model.n(), np = W.n_paths();
  W.set_measure(Measure::P);
  SimulationBundle b{grid,
                     Measure::P,
                     std::move(W),
                     PathEnsemble(grid, n, np, Measure::QTilde),
                     PathEnsemble(grid, n, np, Measure::P),
                     PathEnsemble(grid, 1, np, Measure::P),
                     PathEnsemble(grid, n, np, Measure::P)};
  parallel_for(np, [&](std::size_t p) { complete_p(model, b.grid, spans_of(b, p), p); });
  return b;
}

SimulationBundle build_bundle_under_Q(const MarketModel& model, PathEnsemble Wtilde) {
  if (Wtilde.dim() != model.n()) {
    throw std::invalid_argument("bundle: W-tilde dimension differs from asset count");
  }
  const TimeGrid grid = Wtilde.grid();
  const std::size_t n = model.n(), np = Wtilde.n_paths();
  Wtilde.set_measure(Measure::QTilde);
  SimulationBundle b{grid,
                     Measure::QTilde,
                     PathEnsemble(grid, n, np, Measure::P),
                     std::move(Wtilde),
                     PathEnsemble(grid, n, np, Measure::QTilde),
                     PathEnsemble(grid, 1, np, Measure::QTilde),
                     PathEnsemble(grid, n, np, Measure::QTilde)};
  parallel_for(np, [&](std::size_t p) { complete_q(model, b.grid, spans_of(b, p), p); });
  return b;
}

SimulationBundle simulate_bundle_under_P(const MarketModel& model, const TimeGrid& grid,
                                         std::size_t n_paths, const SeedSpec& seeds,
                                         std::size_t first_path) {
  return build_bundle_under_P(model,
                              sample_brownian(grid, model.n(), n_paths, seeds, Measure::P, first_path));
}

SimulationBundle simulate_bundle_under_Q(const MarketModel& model, const TimeGrid& grid,
                                         std::size_t n_paths, const SeedSpec& seeds,
                                         std::size_t first_path) {
  return build_bundle_under_Q(
      model, sample_brownian(grid, model.n(), n_paths, seeds, Measure::QTilde, first_path));
}

MeanEstimate q_expectation(std::span<const double> payoff, std::span<const double> z_terminal) {
  if (payoff.size() != z_terminal.size() || payoff.empty()) {
    throw std::invalid_argument("q_expectation: payoff and Z(T) samples must match");
  }
  RunningMoments acc;
  for (std::size_t i = 0; i < payoff.size(); ++i) acc.push(z_terminal[i] * payoff[i]);
  return acc.estimate();
}

std::vector<double> terminal_values(const PathEnsemble& e, std::size_t d) {
  std::vector<double> out(e.n_paths());
  const std::size_t last = e.grid().n_steps();
  for (std::size_t p = 0; p < e.n_paths(); ++p) out[p] = e(p, last, d);
  return out;
}

}  // namespace portdec
