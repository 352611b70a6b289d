#include "portdec/myopic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "portdec/parallel.hpp"

namespace portdec {

std::string to_string(StrategyLabel l) {
  switch (l) {
    case StrategyLabel::myopic: return "myopic";
    case StrategyLabel::hedging: return "hedging";
    case StrategyLabel::combined: return "combined";
  }
  return "unknown";
}

namespace {

void check_x(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("initial wealth x must be positive");
}

}  // namespace

void myopic_units_at(double x, const PathView& path, const MarketModel& model, const UtilityModel& u,
                     std::size_t node, std::span<double> out) {
  const std::size_t n = model.n();
  const double tol = u.risk_tolerance(u.U1(x) * path.z(node));
  const Eigen::MatrixXd& a = model.sigma_inv_t();
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      v += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * path.th(node, j);
    }
    out[i] = tol * v / path.s(node, i);
  }
}

StrategyPath myopic_portfolio(double x, const SimulationBundle& b, const MarketModel& model,
                              const UtilityModel& u) {
  check_x(x);
  StrategyPath s{PathEnsemble(b.grid, model.n(), b.n_paths(), b.simulated_under), StrategyLabel::myopic};
  const std::size_t n = model.n();
  parallel_for(b.n_paths(), [&](std::size_t p) {
    std::span<double> row = s.units.path(p);
    const PathView v = b.view(p);
    for (std::size_t k = 0; k < b.grid.n_nodes(); ++k) {
      myopic_units_at(x, v, model, u, k, row.subspan(k * n, n));
    }
  });
  return s;
}

void correction_path(double x, const PathView& path, const UtilityModel& u, std::span<double> out) {
  const std::size_t nn = path.grid->n_nodes();
  const double u1 = u.U1(x);
  const double half_dt = 0.5 * path.grid->dt();
  out[0] = 0.0;
  double prev = u.F(u1 * path.z(0)) * path.theta_sq(0);
  for (std::size_t k = 1; k < nn; ++k) {
    const double cur = u.F(u1 * path.z(k)) * path.theta_sq(k);
    out[k] = out[k - 1] + half_dt * (prev + cur);
    prev = cur;
  }
}

double correction_terminal(double x, const PathView& path, const UtilityModel& u) {
  const std::size_t nn = path.grid->n_nodes();
  const double u1 = u.U1(x);
  double acc = 0.0;
  for (std::size_t k = 0; k < nn; ++k) {
    const double w = (k == 0 || k + 1 == nn) ? 0.5 : 1.0;
    acc += w * u.F(u1 * path.z(k)) * path.theta_sq(k);
  }
  return acc * path.grid->dt();
}

PathEnsemble correction_process(double x, const SimulationBundle& b, const UtilityModel& u) {
  check_x(x);
  PathEnsemble v(b.grid, 1, b.n_paths(), b.simulated_under);
  parallel_for(b.n_paths(), [&](std::size_t p) { correction_path(x, b.view(p), u, v.path(p)); });
  return v;
}

WealthPath simulate_wealth(double x, const StrategyPath& strategy, const SimulationBundle& b) {
  if (!(strategy.units.grid() == b.grid) || strategy.units.n_paths() != b.n_paths() ||
      strategy.units.dim() != b.n_assets()) {
    throw std::invalid_argument("simulate_wealth: strategy and bundle do not match");
  }
  WealthPath w{PathEnsemble(b.grid, 1, b.n_paths(), b.simulated_under), x};
  const std::size_t n = b.n_assets();
  parallel_for(b.n_paths(), [&](std::size_t p) {
    std::span<double> xv = w.values.path(p);
    xv[0] = x;
    for (std::size_t k = 0; k + 1 < b.grid.n_nodes(); ++k) {
      double gain = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        gain += strategy.units(p, k, i) * (b.S(p, k + 1, i) - b.S(p, k, i));
      }
      xv[k + 1] = xv[k] + gain;
      if (!std::isfinite(xv[k + 1])) throw NumericError("simulate_wealth: non-finite wealth", p, k);
    }
  });
  return w;
}

void myopic_wealth_path(double x, const PathView& path, const MarketModel& model,
                        const UtilityModel& u, std::span<double> out) {
  const std::size_t n = model.n();
  std::vector<double> units(n);
  out[0] = x;
  for (std::size_t k = 0; k + 1 < path.grid->n_nodes(); ++k) {
    myopic_units_at(x, path, model, u, k, units);
    double gain = 0.0;
    for (std::size_t i = 0; i < n; ++i) gain += units[i] * (path.s(k + 1, i) - path.s(k, i));
    out[k + 1] = out[k] + gain;
    if (!std::isfinite(out[k + 1])) throw NumericError("myopic wealth: non-finite value", 0, k);
  }
}

void eu1_residual_path(double x, const PathView& path, const MarketModel& model, const UtilityModel& u,
                       std::span<double> out) {
  const std::size_t nn = path.grid->n_nodes();
  std::vector<double> v(nn);
  myopic_wealth_path(x, path, model, u, out);
  correction_path(x, path, u, v);
  const double u1 = u.U1(x);
  for (std::size_t k = 0; k < nn; ++k) out[k] += v[k] - u.I(u1 * path.z(k));
}

void Eu1Residual::add_path(std::span<const double> residual) {
  if (sum_sq.empty()) {
    sum_sq.assign(residual.size(), 0.0);
    max_abs_node.assign(residual.size(), 0.0);
  }
  for (std::size_t k = 0; k < residual.size(); ++k) {
    sum_sq[k] += residual[k] * residual[k];
    max_abs_node[k] = std::max(max_abs_node[k], std::abs(residual[k]));
  }
  ++n_paths;
}

void Eu1Residual::merge(const Eu1Residual& other) {
  if (sum_sq.empty()) {
    *this = other;
    return;
  }
  if (other.sum_sq.size() != sum_sq.size()) throw std::invalid_argument("Eu1Residual: grid mismatch");
  for (std::size_t k = 0; k < sum_sq.size(); ++k) {
    sum_sq[k] += other.sum_sq[k];
    max_abs_node[k] = std::max(max_abs_node[k], other.max_abs_node[k]);
  }
  n_paths += other.n_paths;
}

double Eu1Residual::rms() const {
  if (n_paths == 0 || sum_sq.empty()) return 0.0;
  double s = 0.0;
  for (double v : sum_sq) s += v;
  return std::sqrt(s / static_cast<double>(n_paths * sum_sq.size()));
}

double Eu1Residual::max_abs() const {
  double m = 0.0;
  for (double v : max_abs_node) m = std::max(m, v);
  return m;
}

double Eu1Residual::rms_at(std::size_t node) const {
  return n_paths ? std::sqrt(sum_sq[node] / static_cast<double>(n_paths)) : 0.0;
}

Eu1Residual check_identity_eu1(double x, const SimulationBundle& b, const MarketModel& model,
                               const UtilityModel& u) {
  check_x(x);
  const std::size_t nn = b.grid.n_nodes();
  const std::size_t np = b.n_paths();
  std::vector<double> resid(np * nn);
  parallel_for(np, [&](std::size_t p) {
    eu1_residual_path(x, b.view(p), model, u, std::span<double>(resid).subspan(p * nn, nn));
  });
  Eu1Residual r;
  for (std::size_t p = 0; p < np; ++p) r.add_path(std::span<const double>(resid).subspan(p * nn, nn));
  return r;
}

std::string StoppingRule::describe() const {
  if (kind == Kind::fixed_time) return "t=" + std::to_string(time);
  return "min(first theta>=" + std::to_string(level) + ",T)";
}

std::size_t stopping_node(const StoppingRule& rule, const PathView& path) {
  if (rule.kind == StoppingRule::Kind::fixed_time) return path.grid->nearest_node(rule.time);
  for (std::size_t k = 0; k < path.grid->n_nodes(); ++k) {
    if (path.th(k, 0) >= rule.level) return k;
  }
  return path.grid->n_steps();
}

std::vector<double> budget_samples(double x, const SimulationBundle& b, const MarketModel& model,
                                   const UtilityModel& u, const StoppingRule& rule) {
  check_x(x);
  std::vector<double> out(b.n_paths());
  parallel_for(b.n_paths(), [&](std::size_t p) {
    std::vector<double> xw(b.grid.n_nodes());
    const PathView v = b.view(p);
    myopic_wealth_path(x, v, model, u, xw);
    const std::size_t k = stopping_node(rule, v);
    out[p] = v.z(k) * xw[k];
  });
  return out;
}

MeanEstimate check_budget_martingale(double x, const SimulationBundle& b, const MarketModel& model,
                                     const UtilityModel& u, const StoppingRule& rule) {
  return mean_estimate(budget_samples(x, b, model, u, rule));
}

AdmissibilityReport check_admissibility(double x, const SimulationBundle& b, const MarketModel& model,
                                        const UtilityModel& u) {
  check_x(x);
  const std::size_t nn = b.grid.n_nodes();
  std::vector<double> min_per_path(b.n_paths());
  std::vector<std::size_t> first_bad(b.n_paths());
  parallel_for(b.n_paths(), [&](std::size_t p) {
    std::vector<double> xw(nn), v(nn);
    myopic_wealth_path(x, b.view(p), model, u, xw);
    correction_path(x, b.view(p), u, v);
    double m = std::numeric_limits<double>::infinity();
    std::size_t bad = nn;
    for (std::size_t k = 0; k < nn; ++k) {
      const double total = xw[k] + v[k];
      m = std::min(m, total);
      if (!(total > 0.0) && bad == nn) bad = k;
    }
    min_per_path[p] = m;
    first_bad[p] = bad;
  });
  AdmissibilityReport r;
  r.min_value = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < b.n_paths(); ++p) {
    r.min_value = std::min(r.min_value, min_per_path[p]);
    if (first_bad[p] < nn) {
      if (r.violations == 0) {
        r.first_path = p;
        r.first_step = first_bad[p];
      }
      ++r.violations;
    }
  }
  r.ok = r.violations == 0;
  return r;
}

}  // namespace portdec
