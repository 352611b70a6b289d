#include "portdec/hedging.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "portdec/errors.hpp"
#include "portdec/parallel.hpp"
#include "portdec/stats.hpp"

namespace portdec {

// ---------------------------------------------------------------- truncation

double truncate_kappa(double k, double x) {
  if (!(k > 0.0)) throw std::invalid_argument("truncate_kappa: level must be positive");
  const double a = std::abs(x);
  if (a <= k) return x;
  const double sign = x < 0.0 ? -1.0 : 1.0;
  if (a >= 2.0 * k) return sign * 1.5 * k;
  // slope (1-u)^2 (1+2u), u = s/k: falls from 1 to 0 over (k, 2k)
  const double s = a - k;
  const double s2 = s * s;
  return sign * (k + s - s2 * s / (k * k) + s2 * s2 / (2.0 * k * k * k));
}

std::string TruncationRequest::describe() const {
  std::ostringstream os;
  switch (mode) {
    case Mode::off: os << "off"; break;
    case Mode::absolute: os << value; break;
    case Mode::multiple: os << value << "x"; break;
  }
  return os.str();
}

namespace {

double sample_quantile(const PathEnsemble& e, bool absolute, double q) {
  // every node of a deterministic subset of paths, at most ~2e6 samples
  const std::size_t per_path = e.path_stride();
  const std::size_t step = std::max<std::size_t>(1, e.n_paths() * per_path / 2000000);
  std::vector<double> xs;
  xs.reserve(e.n_paths() / step * per_path + per_path);
  for (std::size_t p = 0; p < e.n_paths(); p += step) {
    for (double v : e.path(p)) xs.push_back(absolute ? std::abs(v) : v);
  }
  const auto pos = static_cast<std::size_t>(std::floor(q * static_cast<double>(xs.size() - 1)));
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(pos), xs.end());
  return xs[pos];
}

}  // namespace

Truncation resolve_truncation(const TruncationRequest& req, const SimulationBundle& b) {
  Truncation t;
  switch (req.mode) {
    case TruncationRequest::Mode::off: break;
    case TruncationRequest::Mode::absolute:
      if (!(req.value > 0.0)) throw std::invalid_argument("truncation level must be positive");
      t.k_theta = req.value;
      t.k_z = req.value;
      break;
    case TruncationRequest::Mode::multiple: {
      if (!(req.value > 0.0)) throw std::invalid_argument("truncation multiple must be positive");
      const double qt = sample_quantile(b.theta, true, 0.999);
      const double qz = sample_quantile(b.Z, false, 0.999);
      t.k_theta = req.value * std::max(qt, 1e-12);
      t.k_z = req.value * std::max(qz, 1e-12);
      break;
    }
  }
  return t;
}

// ------------------------------------------------------- derivative weights

void mu_weights_path(double x, const PathView& path, const UtilityModel& u, const Truncation& trunc,
                     std::span<double> c1, std::span<double> c2) {
  const std::size_t n = path.n;
  const double u1 = u.U1(x);
  for (std::size_t k = 0; k < path.grid->n_nodes(); ++k) {
    const double z = trunc.z(path.z(k));
    double th2 = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
      const double t = trunc.theta(path.th(k, d));
      th2 += t * t;
    }
    const double y = u1 * z;
    const double f = u.F(y);
    c1[k] = u1 * u.F1(y) * th2;
    for (std::size_t d = 0; d < n; ++d) c2[k * n + d] = 2.0 * f * trunc.theta(path.th(k, d));
  }
}

MuDerivativeWeights mu_weights(double x, const SimulationBundle& b, const UtilityModel& u,
                               const Truncation& trunc) {
  MuDerivativeWeights w{PathEnsemble(b.grid, 1, b.n_paths(), b.simulated_under),
                        PathEnsemble(b.grid, b.n_assets(), b.n_paths(), b.simulated_under)};
  parallel_for(b.n_paths(), [&](std::size_t p) {
    mu_weights_path(x, b.view(p), u, trunc, w.c1.path(p), w.c2.path(p));
  });
  return w;
}

namespace {

double trapezoid(const TimeGrid& grid, const std::vector<double>& f) {
  double acc = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) acc += (k == 0 || k + 1 == f.size() ? 0.5 : 1.0) * f[k];
  return acc * grid.dt();
}

}  // namespace

double functional_L(double x, const UtilityModel& u, const RiskModel& risk, const TimeGrid& grid,
                    std::span<const double> z, std::span<const double> w) {
  const std::size_t n = risk.dim();
  const std::vector<double> th = risk.theta_path(grid, w);
  std::vector<double> f(grid.n_nodes());
  const double u1 = u.U1(x);
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
    double th2 = 0.0;
    for (std::size_t d = 0; d < n; ++d) th2 += th[k * n + d] * th[k * n + d];
    f[k] = u.F(u1 * z[k]) * th2;
  }
  return trapezoid(grid, f);
}

double functional_L_derivative(double x, const UtilityModel& u, const RiskModel& risk,
                               const TimeGrid& grid, std::span<const double> z,
                               std::span<const double> w, std::span<const double> v1,
                               std::span<const double> v2) {
  const std::size_t n = risk.dim();
  const std::vector<double> th = risk.theta_path(grid, w);
  const std::vector<double> dth = risk.frechet_apply(grid, w, v2);
  const double u1 = u.U1(x);
  std::vector<double> f(grid.n_nodes());
  for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
    double th2 = 0.0, c2_dth = 0.0;
    const double y = u1 * z[k];
    for (std::size_t d = 0; d < n; ++d) {
      th2 += th[k * n + d] * th[k * n + d];
      c2_dth += 2.0 * u.F(y) * th[k * n + d] * dth[k * n + d];
    }
    f[k] = u1 * u.F1(y) * th2 * v1[k] + c2_dth;
  }
  return trapezoid(grid, f);
}

FdReport functional_L_fd_check(double x, const UtilityModel& u, const RiskModel& risk,
                               const TimeGrid& grid, std::span<const double> z,
                               std::span<const double> w, std::span<const double> v1,
                               std::span<const double> v2, std::span<const double> eps_ladder) {
  FdReport rep;
  const double l0 = functional_L(x, u, risk, grid, z, w);
  const double d = functional_L_derivative(x, u, risk, grid, z, w, v1, v2);
  std::vector<double> zs(z.size()), ws(w.size());
  bool roundoff = true;
  for (double eps : eps_ladder) {
    for (std::size_t i = 0; i < z.size(); ++i) zs[i] = z[i] + eps * v1[i];
    for (std::size_t i = 0; i < w.size(); ++i) ws[i] = w[i] + eps * v2[i];
    const double r = std::abs(functional_L(x, u, risk, grid, zs, ws) - l0 - eps * d);
    rep.eps.push_back(eps);
    rep.remainder.push_back(r);
    if (r > 1e-13 * std::max(1.0, std::abs(l0))) roundoff = false;
  }
  rep.at_roundoff = roundoff;
  rep.slope = (roundoff || rep.eps.size() < 2) ? std::numeric_limits<double>::quiet_NaN()
                                                : loglog_slope(rep.eps, rep.remainder);
  return rep;
}

// ----------------------------------------------------------- variational flow

Phi2Block solve_phi2(std::size_t s, const RiskModel& risk, const TimeGrid& grid) {
  if (s >= grid.n_nodes()) throw std::invalid_argument("solve_phi2: anchor outside the grid");
  Phi2Block b;
  b.anchor = s;
  b.n = risk.dim();
  b.n_nodes = grid.n_nodes();
  const std::size_t n = b.n;
  b.phi.assign((n + 1) * b.n_nodes * n, 0.0);
  b.kappa.assign((n + 1) * b.n_nodes * n, 0.0);
  std::vector<double> phi(n), kap(n);
  for (std::size_t j = 1; j <= n; ++j) {
    RiskModel::LinearizedStepper lin(risk, grid.dt());
    std::fill(phi.begin(), phi.end(), 0.0);
    phi[j - 1] = 1.0;
    for (std::size_t k = s; k < b.n_nodes; ++k) {
      lin.apply(phi, kap);
      for (std::size_t d = 0; d < n; ++d) {
        b.phi[(j * b.n_nodes + k) * n + d] = phi[d];
        b.kappa[(j * b.n_nodes + k) * n + d] = kap[d];
        phi[d] -= grid.dt() * kap[d];
      }
    }
  }
  return b;
}

GronwallReport check_gronwall(const RiskModel& risk, const TimeGrid& grid) {
  GronwallReport r;
  r.K = risk.kernel_variation_bound(grid.horizon());
  const std::size_t n = risk.dim();
  for (std::size_t s = 0; s < grid.n_nodes(); ++s) {
    const Phi2Block b = solve_phi2(s, risk, grid);
    double sup = 0.0;
    for (std::size_t k = s; k < grid.n_nodes(); ++k) {
      for (std::size_t j = 1; j <= n; ++j) {
        double norm = 0.0;
        for (std::size_t d = 0; d < n; ++d) norm += b.phi_at(j, k, d) * b.phi_at(j, k, d);
        sup = std::max(sup, std::sqrt(norm));
      }
      const double ratio = sup / std::exp(r.K * (grid.time(k) - grid.time(s)));
      if (ratio > r.worst_ratio) {
        r.worst_ratio = ratio;
        r.worst_anchor = s;
        r.worst_node = k;
      }
    }
  }
  r.ok = r.worst_ratio <= 1.0 + 1e-12;
  return r;
}

namespace {

void check_phi2(const SimulationBundle& b, const Phi2Block& phi2) {
  if (phi2.n_nodes != b.grid.n_nodes() || phi2.n != b.n_assets()) {
    throw std::invalid_argument("Phi2 block does not match the bundle");
  }
}

Phi1Block empty_phi1(std::size_t s, const SimulationBundle& b) {
  Phi1Block out;
  out.anchor = s;
  out.n_paths = b.n_paths();
  out.n_cols = b.n_assets() + 1;
  out.n_nodes = b.grid.n_nodes();
  out.values.assign(out.n_paths * out.n_cols * out.n_nodes, 0.0);
  return out;
}

}  // namespace

Phi1Block solve_phi1(std::size_t s, const SimulationBundle& b, const Phi2Block& phi2) {
  check_phi2(b, phi2);
  if (phi2.anchor != s) throw std::invalid_argument("solve_phi1: anchor differs from the Phi2 block");
  Phi1Block out = empty_phi1(s, b);
  const std::size_t n = b.n_assets();
  const double dt = b.grid.dt();
  parallel_for(b.n_paths(), [&](std::size_t p) {
    const PathView v = b.view(p);
    for (std::size_t j = 0; j <= n; ++j) {
      double phi = j == 0 ? 1.0 : 0.0;
      out.at(p, j, s) = phi;
      for (std::size_t k = s; k + 1 < b.grid.n_nodes(); ++k) {
        const double z = v.z(k);
        double drift = v.theta_sq(k) * phi;
        double diff = 0.0;
        for (std::size_t d = 0; d < n; ++d) {
          const double kap = phi2.kappa_at(j, k, d);
          drift += 2.0 * z * v.th(k, d) * kap;
          diff += (v.th(k, d) * phi + z * kap) * (v.wt(k + 1, d) - v.wt(k, d));
        }
        phi += drift * dt - diff;
        if (!std::isfinite(phi)) throw NumericError("solve_phi1: non-finite value", p, k);
        out.at(p, j, k + 1) = phi;
      }
    }
  });
  return out;
}

Phi1Block phi1_closed_form(std::size_t s, const SimulationBundle& b, const Phi2Block& phi2) {
  check_phi2(b, phi2);
  if (phi2.anchor != s) throw std::invalid_argument("phi1_closed_form: anchor differs from the Phi2 block");
  Phi1Block out = empty_phi1(s, b);
  const std::size_t n = b.n_assets();
  parallel_for(b.n_paths(), [&](std::size_t p) {
    const PathView v = b.view(p);
    for (std::size_t k = s; k < b.grid.n_nodes(); ++k) out.at(p, 0, k) = v.z(k) / v.z(s);
    for (std::size_t j = 1; j <= n; ++j) {
      double acc = 0.0;
      for (std::size_t k = s + 1; k < b.grid.n_nodes(); ++k) {
        for (std::size_t d = 0; d < n; ++d) acc += phi2.kappa_at(j, k - 1, d) * (v.w(k, d) - v.w(k - 1, d));
        out.at(p, j, k) = -v.z(k) * acc;
      }
    }
  });
  return out;
}

std::vector<double> lambda_row(std::size_t t, const SimulationBundle& b, const Phi2Block& phi2,
                               const Phi1Block& phi1, const MuDerivativeWeights& weights) {
  check_phi2(b, phi2);
  if (phi2.anchor != t || phi1.anchor != t) throw std::invalid_argument("lambda_row: anchor mismatch");
  const std::size_t n = b.n_assets();
  const std::size_t nn = b.grid.n_nodes();
  const double dt = b.grid.dt();
  std::vector<double> out(b.n_paths() * n, 0.0);
  if (t + 1 >= nn) return out;  // empty integral at T
  parallel_for(b.n_paths(), [&](std::size_t p) {
    std::vector<double> m(n + 1, 0.0);
    for (std::size_t u = t; u < nn; ++u) {
      const double w = (u == t || u + 1 == nn) ? 0.5 * dt : dt;
      const double c1 = weights.c1(p, u);
      for (std::size_t j = 0; j <= n; ++j) {
        double val = c1 * phi1.at(p, j, u);
        for (std::size_t d = 0; d < n; ++d) val += weights.c2(p, u, d) * phi2.kappa_at(j, u, d);
        m[j] += w * val;
      }
    }
    // right-multiply by g(t) = [-Z theta^T; I_n]
    for (std::size_t i = 0; i < n; ++i) out[p * n + i] = -m[0] * b.Z(p, t) * b.theta(p, t, i) + m[i + 1];
  });
  return out;
}

LambdaEngine::LambdaEngine(double x, const UtilityModel& u, const RiskModel& risk, const TimeGrid& grid,
                           Truncation trunc)
    : x_(x), u_(&u), grid_(grid), n_(risk.dim()), trunc_(trunc) {
  zero_ = u.is_log();
  kernel_zero_ = risk.is_constant();
  if (!kernel_zero_) {
    // the kernel is path independent and time homogeneous, so one anchor gives every lag
    const Phi2Block b = solve_phi2(0, risk, grid);
    kappa_.assign(n_ * grid.n_nodes() * n_, 0.0);
    for (std::size_t j = 1; j <= n_; ++j) {
      for (std::size_t k = 0; k < grid.n_nodes(); ++k) {
        for (std::size_t d = 0; d < n_; ++d) {
          kappa_[((j - 1) * grid.n_nodes() + k) * n_ + d] = b.kappa_at(j, k, d);
        }
      }
    }
  }
}

void LambdaEngine::lambda_path(const PathView& path, std::span<double> out,
                               const std::vector<char>& anchors) const {
  const std::size_t nn = grid_.n_nodes();
  const std::size_t n = n_;
  const double dt = grid_.dt();
  std::fill(out.begin(), out.end(), 0.0);
  if (zero_) return;
  auto wanted = [&](std::size_t k) { return anchors.empty() || anchors[k]; };

  std::vector<double> tt(nn * n), c2(nn * n), h(nn), a1(nn, 0.0);
  const double u1 = u_->U1(x_);
  for (std::size_t k = 0; k < nn; ++k) {
    const double z = trunc_.z(path.z(k));
    double th2 = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
      tt[k * n + d] = trunc_.theta(path.th(k, d));
      th2 += tt[k * n + d] * tt[k * n + d];
    }
    const double y = u1 * z;
    const double f = u_->F(y);
    h[k] = u1 * u_->F1(y) * th2 * z;
    for (std::size_t d = 0; d < n; ++d) c2[k * n + d] = 2.0 * f * tt[k * n + d];
  }
  // A1(t): trapezoid of c1 Z over [t, T]
  for (std::size_t k = nn - 1; k-- > 0;) a1[k] = a1[k + 1] + 0.5 * dt * (h[k] + h[k + 1]);

  if (kernel_zero_) {
    for (std::size_t t = 0; t + 1 < nn; ++t) {
      if (!wanted(t)) continue;
      for (std::size_t i = 0; i < n; ++i) out[t * n + i] = -a1[t] * tt[t * n + i];
    }
    return;
  }

  // xi_u = w'_u c2_u - A(u) dW_u with A(r) = sum_{u>r} w_u h_u
  std::vector<double> xi(nn * n);
  double a = 0.0;
  for (std::size_t u = nn; u-- > 0;) {
    const double wp = (u + 1 == nn) ? 0.5 * dt : dt;
    for (std::size_t d = 0; d < n; ++d) {
      const double dw = (u + 1 < nn) ? path.w(u + 1, d) - path.w(u, d) : 0.0;
      xi[u * n + d] = wp * c2[u * n + d] - a * dw;
    }
    a += wp * h[u];
  }
  for (std::size_t t = 0; t + 1 < nn; ++t) {
    if (!wanted(t)) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double* kap = &kappa_[(i * nn) * n];
      double r = 0.0;
      for (std::size_t u = t; u < nn; ++u) {
        for (std::size_t d = 0; d < n; ++d) r += kap[(u - t) * n + d] * xi[u * n + d];
      }
      for (std::size_t d = 0; d < n; ++d) r -= 0.5 * dt * kap[d] * c2[t * n + d];
      out[t * n + i] = -a1[t] * tt[t * n + i] + r;
    }
  }
}

std::vector<double> LambdaEngine::lambda_at(const PathView& path, std::size_t node) const {
  std::vector<char> mask(grid_.n_nodes(), 0);
  mask.at(node) = 1;
  std::vector<double> all(grid_.n_nodes() * n_);
  lambda_path(path, all, mask);
  return {all.begin() + static_cast<std::ptrdiff_t>(node * n_),
          all.begin() + static_cast<std::ptrdiff_t>((node + 1) * n_)};
}

PathEnsemble lambda_all(double x, const SimulationBundle& b, const UtilityModel& u,
                        const RiskModel& risk, const Truncation& trunc, const std::vector<char>& anchors) {
  PathEnsemble out(b.grid, b.n_assets(), b.n_paths(), b.simulated_under);
  const LambdaEngine engine(x, u, risk, b.grid, trunc);
  if (engine.trivially_zero()) return out;
  parallel_for(b.n_paths(), [&](std::size_t p) { engine.lambda_path(b.view(p), out.path(p), anchors); });
  return out;
}

// ------------------------------------------------------------------ regression

std::string to_string(BasisKind k) { return k == BasisKind::scaled ? "scaled" : "raw"; }

BetaModel::BetaModel(double x, const UtilityModel& u, RegressionSpec spec, TimeGrid grid, std::size_t n)
    : u1x_(u.U1(x)), u_(&u), spec_(spec), grid_(std::move(grid)), n_(n) {
  if (spec_.degree < 0) throw std::invalid_argument("regression degree must be non-negative");
  if (spec_.ridge < 0.0) throw std::invalid_argument("ridge must be non-negative");
  if (spec_.stride == 0) throw std::invalid_argument("anchor stride must be at least 1");
  fits_.resize(grid_.n_nodes());
}

std::size_t BetaModel::anchor_for(std::size_t node) const {
  const std::size_t last = grid_.n_steps() - 1;
  return std::min(node / spec_.stride * spec_.stride, last - last % spec_.stride);
}

bool BetaModel::is_anchor(std::size_t node) const {
  return node < grid_.n_steps() && node % spec_.stride == 0;
}

std::vector<char> BetaModel::anchor_mask() const {
  std::vector<char> m(grid_.n_nodes(), 0);
  for (std::size_t k = 0; k < grid_.n_nodes(); ++k) m[k] = is_anchor(k) ? 1 : 0;
  return m;
}

namespace {

std::vector<double> features_of(BasisKind kind, double z, std::span<const double> theta) {
  std::vector<double> f;
  f.reserve(theta.size() + 1);
  f.push_back(kind == BasisKind::scaled ? std::log(z) : z);
  f.insert(f.end(), theta.begin(), theta.end());
  return f;
}

// all exponent tuples over the kept features with total degree <= deg, graded order
std::vector<std::vector<int>> monomials(const std::vector<char>& keep, int deg) {
  std::vector<std::vector<int>> out;
  const std::size_t m = keep.size();
  std::vector<int> e(m, 0);
  for (int total = 0; total <= deg; ++total) {
    // enumerate compositions of `total` over kept slots
    std::vector<std::size_t> slots;
    for (std::size_t i = 0; i < m; ++i) {
      if (keep[i]) slots.push_back(i);
    }
    if (slots.empty()) {
      if (total == 0) out.push_back(e);
      continue;
    }
    std::vector<int> c(slots.size(), 0);
    c[0] = total;
    while (true) {
      std::vector<int> ex(m, 0);
      for (std::size_t i = 0; i < slots.size(); ++i) ex[slots[i]] = c[i];
      out.push_back(ex);
      // next composition in reverse-lexicographic order
      std::size_t i = 0;
      while (i + 1 < c.size() && c[i] == 0) ++i;
      if (i + 1 >= c.size()) break;
      const int v = c[i];
      c[i] = 0;
      c[0] = v - 1;
      c[i + 1] += 1;
    }
  }
  return out;
}

}  // namespace

void BetaModel::basis(const NodeFit& fit, double z, std::span<const double> theta,
                      Eigen::VectorXd& out) const {
  const std::vector<double> f = features_of(spec_.basis, z, theta);
  const double w = spec_.basis == BasisKind::scaled ? u_->risk_tolerance(u1x_ * z) : 1.0;
  out.resize(static_cast<Eigen::Index>(fit.exponents.size()));
  std::vector<double> s(f.size(), 0.0);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (fit.sd[i] > 0.0) s[i] = (f[i] - fit.mean[i]) / fit.sd[i];
  }
  for (std::size_t b = 0; b < fit.exponents.size(); ++b) {
    double v = w;
    for (std::size_t i = 0; i < f.size(); ++i) {
      for (int e = 0; e < fit.exponents[b][i]; ++e) v *= s[i];
    }
    out(static_cast<Eigen::Index>(b)) = v;
  }
}

void BetaModel::predict(std::size_t node, double z, std::span<const double> theta,
                        std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  if (zero_ || node >= grid_.n_steps()) return;
  const NodeFit& fit = fits_[anchor_for(node)];
  Eigen::VectorXd phi;
  basis(fit, z, theta, phi);
  for (std::size_t i = 0; i < n_; ++i) out[i] = phi.dot(fit.coef.col(static_cast<Eigen::Index>(i)));
}

std::vector<double> BetaModel::predict_se(std::size_t node, double z,
                                          std::span<const double> theta) const {
  std::vector<double> se(n_, 0.0);
  if (zero_ || node >= grid_.n_steps()) return se;
  const NodeFit& fit = fits_[anchor_for(node)];
  Eigen::VectorXd phi;
  basis(fit, z, theta, phi);
  const double quad = phi.dot(fit.gram_inv * phi);
  for (std::size_t i = 0; i < n_; ++i) se[i] = std::sqrt(std::max(0.0, fit.sigma2[i] * quad));
  return se;
}

double BetaModel::max_condition() const {
  double c = 0.0;
  for (const NodeFit& f : fits_) c = std::max(c, f.condition);
  return c;
}

std::size_t BetaModel::auto_ridge_nodes() const {
  std::size_t c = 0;
  for (std::size_t k = 0; k < fits_.size(); ++k) {
    if (is_anchor(k) && spec_.ridge == 0.0 && fits_[k].ridge > 0.0) ++c;
  }
  return c;
}

BetaModel fit_beta_inplace(PathEnsemble& lambda, const SimulationBundle& b, const RegressionSpec& spec,
                           double x, const UtilityModel& u) {
  const std::size_t n = b.n_assets();
  const std::size_t np = b.n_paths();
  const std::size_t nn = b.grid.n_nodes();
  if (lambda.n_paths() != np || lambda.dim() != n || !(lambda.grid() == b.grid)) {
    throw std::invalid_argument("estimate_beta: lambda samples do not match the bundle");
  }
  BetaModel model(x, u, spec, b.grid, n);
  const auto vals = lambda.values();
  if (u.is_log() || std::all_of(vals.begin(), vals.end(), [](double v) { return v == 0.0; })) {
    model.set_zero();
    std::fill(lambda.values().begin(), lambda.values().end(), 0.0);
    return model;
  }
  const std::size_t nf = n + 1;
  for (std::size_t k = 0; k + 1 < nn; ++k) {
    if (!model.is_anchor(k)) continue;
    NodeFit& fit = model.fits_[k];
    fit.node = k;
    fit.n_samples = np;

    // feature moments, dropping degenerate directions
    std::vector<RunningMoments> mom(nf);
    for (std::size_t p = 0; p < np; ++p) {
      const std::vector<double> f =
          features_of(spec.basis, b.Z(p, k), b.theta.path(p).subspan(k * n, n));
      for (std::size_t i = 0; i < nf; ++i) mom[i].push(f[i]);
    }
    fit.mean.resize(nf);
    fit.sd.resize(nf);
    std::vector<char> keep(nf, 0);
    for (std::size_t i = 0; i < nf; ++i) {
      fit.mean[i] = mom[i].mean();
      const double sd = std::sqrt(mom[i].variance());
      keep[i] = sd > 1e-12 * std::max(1.0, std::abs(fit.mean[i]));
      fit.sd[i] = keep[i] ? sd : 0.0;
    }
    // the scaled basis carries Z through its weight only: for the implemented utilities
    // E[lambda | F_t] = w(Z) h(t, theta), and powers of log Z just chase heavy tails
    if (spec.basis == BasisKind::scaled) keep[0] = 0;
    fit.exponents = monomials(keep, spec.degree);
    const auto nb = static_cast<Eigen::Index>(fit.exponents.size());
    if (static_cast<std::size_t>(nb) > np) throw EstimationError("fewer paths than basis functions", k);

    Eigen::MatrixXd X(static_cast<Eigen::Index>(np), nb);
    Eigen::MatrixXd Y(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(n));
    Eigen::VectorXd phi;
    // scaled basis: weighted least squares with row weights 1/w(Z), which evens out
    // the Z-driven heteroscedasticity of lambda; coefficients keep their meaning
    Eigen::VectorXd rw = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(np));
    for (std::size_t p = 0; p < np; ++p) {
      const auto pi = static_cast<Eigen::Index>(p);
      model.basis(fit, b.Z(p, k), b.theta.path(p).subspan(k * n, n), phi);
      if (spec.basis == BasisKind::scaled) rw(pi) = 1.0 / u.risk_tolerance(model.u1x_ * b.Z(p, k));
      X.row(pi) = rw(pi) * phi.transpose();
      for (std::size_t i = 0; i < n; ++i) Y(pi, static_cast<Eigen::Index>(i)) = rw(pi) * lambda(p, k, i);
    }
    if (!X.allFinite() || !Y.allFinite()) throw EstimationError("non-finite regression inputs", k);

    // equilibrate columns, then solve the (ridged) normal equations
    const double inv_np = 1.0 / static_cast<double>(np);
    Eigen::VectorXd scale = (X.colwise().squaredNorm() * inv_np).cwiseSqrt().transpose();
    for (Eigen::Index j = 0; j < nb; ++j) {
      if (!(scale(j) > 0.0)) throw EstimationError("basis column vanishes on every path", k);
    }
    const Eigen::MatrixXd Xs = X * scale.cwiseInverse().asDiagonal();
    Eigen::MatrixXd G = (Xs.transpose() * Xs) * inv_np;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
    const double lmax = eig.eigenvalues().maxCoeff();
    const double lmin = eig.eigenvalues().minCoeff();
    fit.condition = lmin > 0.0 ? std::sqrt(lmax / lmin) : std::numeric_limits<double>::infinity();
    fit.ridge = spec.ridge;
    if (spec.ridge == 0.0 && !(lmin > 1e-12 * lmax)) fit.ridge = 1e-10 * lmax;
    G.diagonal().array() += fit.ridge;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw EstimationError("rank-deficient design after ridge", k);
    }
    const Eigen::MatrixXd bs = ldlt.solve((Xs.transpose() * Y) * inv_np);
    if (!bs.allFinite()) throw EstimationError("regression produced non-finite coefficients", k);
    fit.coef = scale.cwiseInverse().asDiagonal() * bs;
    const Eigen::MatrixXd ginv = ldlt.solve(Eigen::MatrixXd::Identity(nb, nb));
    fit.gram_inv = scale.cwiseInverse().asDiagonal() * ginv * scale.cwiseInverse().asDiagonal() * inv_np;

    const Eigen::MatrixXd resid = Y - X * fit.coef;
    const Eigen::MatrixXd fitted = rw.cwiseInverse().asDiagonal() * (X * fit.coef);
    fit.sigma2.resize(n);
    const double dof = static_cast<double>(np > static_cast<std::size_t>(nb) ? np - nb : 1);
    for (std::size_t i = 0; i < n; ++i) {
      fit.sigma2[i] = resid.col(static_cast<Eigen::Index>(i)).squaredNorm() / dof;
    }
    for (std::size_t p = 0; p < np; ++p) {
      for (std::size_t i = 0; i < n; ++i) {
        lambda(p, k, i) = fitted(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i));
      }
    }
  }
  // nodes between anchors reuse the latest anchor's coefficients; nothing is traded at T
  for (std::size_t k = 0; k < nn; ++k) {
    if (model.is_anchor(k)) continue;
    parallel_for(np, [&](std::size_t p) {
      model.predict(k, b.Z(p, k), b.theta.path(p).subspan(k * n, n),
                    std::span<double>(&lambda(p, k, 0), n));
    });
  }
  return model;
}

BetaEstimate estimate_beta(const PathEnsemble& lambda, const SimulationBundle& b,
                           const RegressionSpec& spec, double x, const UtilityModel& u) {
  BetaEstimate est{lambda, {}};
  est.model = fit_beta_inplace(est.beta, b, spec, x, u);
  return est;
}

void hedging_units_from_beta(const MarketModel& model, std::span<const double> beta,
                             std::span<const double> s, std::span<double> out) {
  const std::size_t n = model.n();
  const Eigen::MatrixXd& a = model.sigma_inv_t();
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    for (std::size_t j = 0; j < n; ++j) v += a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * beta[j];
    out[i] = v / s[i];
  }
}

StrategyPath hedging_portfolio(const PathEnsemble& beta, const SimulationBundle& b,
                               const MarketModel& model) {
  if (!(beta.grid() == b.grid) || beta.n_paths() != b.n_paths() || beta.dim() != model.n()) {
    throw std::invalid_argument("hedging_portfolio: beta does not match the bundle");
  }
  StrategyPath s{PathEnsemble(b.grid, model.n(), b.n_paths(), b.simulated_under), StrategyLabel::hedging};
  const std::size_t n = model.n();
  parallel_for(b.n_paths(), [&](std::size_t p) {
    for (std::size_t k = 0; k < b.grid.n_nodes(); ++k) {
      hedging_units_from_beta(model, std::as_const(beta).path(p).subspan(k * n, n),
                              b.S.path(p).subspan(k * n, n),
                              std::span<double>(&s.units(p, k, 0), n));
    }
  });
  return s;
}

// ---------------------------------------------------------------- budget split

MeanEstimate expected_correction(double z, const SimulationBundle& qbundle, const UtilityModel& u) {
  std::vector<double> v(qbundle.n_paths());
  parallel_for(qbundle.n_paths(), [&](std::size_t p) { v[p] = correction_terminal(z, qbundle.view(p), u); });
  const MeanEstimate m = mean_estimate(v);
  if (!std::isfinite(m.mean)) throw NumericError("expected correction is not finite", 0, 0);
  return m;
}

XStarResult solve_xstar(double x, const SimulationBundle& qbundle, const UtilityModel& u, double rel_tol) {
  if (!(x > 0.0)) throw std::invalid_argument("solve_xstar: x must be positive");
  XStarResult r;
  r.x = x;
  auto h = [&](double z) { return z + expected_correction(z, qbundle, u).mean - x; };
  if (h(x) == 0.0) {
    r.xstar = x;
    r.exact = true;
    r.ev = expected_correction(x, qbundle, u);
    return r;
  }
  double lo = 0.0, hi = 10.0 * x;
  double h_lo = h(lo), h_hi = h(hi);
  if (h_lo == 0.0) hi = lo;
  else if (h_hi == 0.0) lo = hi;
  else if ((h_lo < 0.0) == (h_hi < 0.0)) {
    throw RootNotFoundError("no sign change of z + E V_z(T) - x on [0, 10x]: h(0)=" + std::to_string(h_lo) +
                                ", h(10x)=" + std::to_string(h_hi),
                            h_lo, h_hi);
  }
  while (hi - lo > rel_tol * x) {
    const double mid = 0.5 * (lo + hi);
    const double hm = h(mid);
    ++r.iterations;
    if (hm == 0.0) {
      lo = hi = mid;
      break;
    }
    if ((hm < 0.0) == (h_lo < 0.0)) {
      lo = mid;
      h_lo = hm;
    } else {
      hi = mid;
    }
  }
  r.xstar = 0.5 * (lo + hi);
  r.ev = expected_correction(r.xstar, qbundle, u);
  r.h_at_root = r.xstar + r.ev.mean - x;
  return r;
}

// ------------------------------------------------------------------ pipelines

HedgeResult run_hedge(double x, const MarketModel& model, const UtilityModel& u,
                      const SimulationBundle& qbundle, const HedgeSpec& spec) {
  const SimulationBundle& b = qbundle;
  const std::size_t n = model.n();
  const std::size_t np = b.n_paths();
  const std::size_t nn = b.grid.n_nodes();
  HedgeResult r;
  r.x = x;
  r.n_paths = np;
  r.truncation = resolve_truncation(spec.truncation, b);

  PathEnsemble beta(b.grid, n, np, b.simulated_under);
  if (u.is_log()) {
    r.short_circuited = true;
    r.model = BetaModel(x, u, spec.regression, b.grid, n);
    r.model.set_zero();
  } else {
    BetaModel probe(x, u, spec.regression, b.grid, n);
    const std::vector<char> anchors = probe.anchor_mask();
    beta = lambda_all(x, b, u, model.risk(), r.truncation, anchors);
    if (!beta.all_finite() && !r.truncation.active()) {
      r.truncation = resolve_truncation({TruncationRequest::Mode::multiple, 8.0}, b);
      r.auto_truncated = true;
      beta = lambda_all(x, b, u, model.risk(), r.truncation, anchors);
    }
    if (!beta.all_finite()) throw NumericError("lambda is not finite even with truncation", 0, 0);
    for (double v : beta.values()) r.max_lambda_abs = std::max(r.max_lambda_abs, std::abs(v));
    r.model = fit_beta_inplace(beta, b, spec.regression, x, u);
  }

  // representation residual V(T) - E V(T) - sum beta^T dW-tilde
  std::vector<double> vt(np), stoch(np);
  std::vector<double> vpath_sum(nn, 0.0);
  PathEnsemble vpaths(b.grid, 1, np, b.simulated_under);
  parallel_for(np, [&](std::size_t p) {
    const PathView v = b.view(p);
    correction_path(x, v, u, vpaths.path(p));
    vt[p] = vpaths(p, nn - 1);
    double acc = 0.0;
    for (std::size_t k = 0; k + 1 < nn; ++k) {
      for (std::size_t d = 0; d < n; ++d) acc += beta(p, k, d) * (v.wt(k + 1, d) - v.wt(k, d));
    }
    stoch[p] = acc;
  });
  r.ev = mean_estimate(vt);
  r.var_v = sample_variance(vt);
  std::vector<double> resid(np);
  for (std::size_t p = 0; p < np; ++p) resid[p] = vt[p] - r.ev.mean - stoch[p];
  r.var_residual = sample_variance(resid);
  r.residual_ratio = r.var_v > 0.0 ? r.var_residual / r.var_v : 0.0;

  // per-node summaries and the martingale-increment (tower) check
  r.beta_mean.assign(nn, 0.0);
  r.beta_sd.assign(nn, 0.0);
  r.hedge_amount_mean.assign(nn, 0.0);
  r.v_mean.assign(nn, 0.0);
  std::vector<double> amount(n);
  for (std::size_t k = 0; k < nn; ++k) {
    RunningMoments bm, am, vm, inc;
    for (std::size_t p = 0; p < np; ++p) {
      bm.push(beta(p, k, 0));
      vm.push(vpaths(p, k));
      double a0 = 0.0;
      for (std::size_t j = 0; j < n; ++j) a0 += model.sigma_inv_t()(0, static_cast<Eigen::Index>(j)) * beta(p, k, j);
      am.push(a0);
      if (k + 1 < nn) {
        double s = 0.0;
        for (std::size_t d = 0; d < n; ++d) s += beta(p, k, d) * (b.Wtilde(p, k + 1, d) - b.Wtilde(p, k, d));
        inc.push(s);
      }
    }
    r.beta_mean[k] = bm.mean();
    r.beta_sd[k] = std::sqrt(bm.variance());
    r.hedge_amount_mean[k] = am.mean();
    r.v_mean[k] = vm.mean();
    if (k + 1 < nn && inc.variance() > 0.0) r.tower_max_z = std::max(r.tower_max_z, inc.estimate().z_score(0.0));
  }
  return r;
}

namespace {

NodeSummary summarize(std::vector<double> xs) {
  NodeSummary s;
  if (xs.empty()) return s;
  double acc = 0.0;
  for (double v : xs) acc += v;
  s.mean = acc / static_cast<double>(xs.size());
  std::sort(xs.begin(), xs.end());
  auto q = [&](double level) {
    const double pos = level * static_cast<double>(xs.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, xs.size() - 1);
    return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
  };
  s.q05 = q(0.05);
  s.q50 = q(0.5);
  s.q95 = q(0.95);
  return s;
}

}  // namespace

DecompositionReport decompose_on(double x, const MarketModel& model, const UtilityModel& u,
                                 const SimulationBundle& fit_bundle, const HedgeSpec& spec,
                                 const SeedSpec& seeds, std::size_t test_first_path,
                                 std::size_t test_paths, const XStarResult* known_xstar) {
  if (fit_bundle.simulated_under != Measure::QTilde) {
    throw std::invalid_argument("decompose: the fitting bundle must be simulated under Q-tilde");
  }
  DecompositionReport rep;
  rep.x = x;
  rep.conforming = u.conforming();
  rep.xstar = known_xstar ? *known_xstar : solve_xstar(x, fit_bundle, u);
  const double xs = rep.xstar.xstar;
  rep.hedge = run_hedge(xs, model, u, fit_bundle, spec);

  const TimeGrid& grid = fit_bundle.grid;
  const std::size_t n = model.n();
  const std::size_t nn = grid.n_nodes();
  rep.test_paths = test_paths;
  std::vector<double> mismatch(test_paths), target(test_paths), zt(test_paths);
  std::vector<double> x_comb(test_paths), x_myo(test_paths), x_mer(test_paths);
  std::vector<float> w_myo(test_paths * nn), w_hed(test_paths * nn), wealth(test_paths * nn);
  const double u1s = u.U1(xs);
  parallel_for(test_paths, [&](std::size_t p) {
    PathSample sample(grid, n);
    brownian_path(grid, n, seeds, test_first_path + p, sample.Wtilde);
    complete_path_under_Q(model, grid, sample, test_first_path + p);
    const PathView v = sample.view(grid, n);
    std::vector<double> myo(n), hed(n), beta(n), only(n), direction(n);
    double xc = x, xm = x, xr = x;
    for (std::size_t k = 0; k < nn; ++k) {
      myopic_units_at(xs, v, model, u, k, myo);
      rep.hedge.model.predict(k, v.z(k), v.theta.subspan(k * n, n), beta);
      hedging_units_from_beta(model, beta, v.S.subspan(k * n, n), hed);
      const double vm = myo[0] * v.s(k, 0);  // weights reported for the first asset
      const double vh = hed[0] * v.s(k, 0);
      w_myo[p * nn + k] = static_cast<float>(vm / xc);
      w_hed[p * nn + k] = static_cast<float>(vh / xc);
      wealth[p * nn + k] = static_cast<float>(xc);
      if (k + 1 == nn) break;
      // baselines: pi-tilde at x without the hedge, and the Merton rule on current wealth
      myopic_units_at(x, v, model, u, k, only);
      for (std::size_t i = 0; i < n; ++i) {
        double dir = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          dir += model.sigma_inv_t()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * v.th(k, j);
        }
        direction[i] = dir;
      }
      const double tol = xr > 0.0 || !u.conforming() ? u.risk_tolerance(u.U1(xr)) : 0.0;
      double gc = 0.0, gm = 0.0, gr = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double ds = v.s(k + 1, i) - v.s(k, i);
        gc += (myo[i] + hed[i]) * ds;
        gm += only[i] * ds;
        gr += (std::isfinite(tol) ? tol * direction[i] / v.s(k, i) : 0.0) * ds;
      }
      xc += gc;
      xm += gm;
      xr += gr;
      if (!std::isfinite(xc)) throw NumericError("decompose: non-finite wealth", test_first_path + p, k);
    }
    zt[p] = v.z(nn - 1);
    target[p] = u.I(u1s * zt[p]);
    mismatch[p] = xc - target[p];
    x_comb[p] = xc;
    x_myo[p] = xm;
    x_mer[p] = xr;
  });

  double ss = 0.0, st = 0.0;
  for (std::size_t p = 0; p < test_paths; ++p) {
    ss += mismatch[p] * mismatch[p];
    st += target[p] * target[p];
  }
  rep.terminal_rms = std::sqrt(ss / static_cast<double>(test_paths));
  rep.terminal_relative_rms = st > 0.0 ? std::sqrt(ss / st) : 0.0;

  // P-expected utility from Q-tilde samples: E_P[f] = E-tilde[f / Z(T)]
  const double floor_w = 1e-12 * x;
  auto eu = [&](const std::vector<double>& xt, std::size_t& ruined) {
    double acc = 0.0;
    ruined = 0;
    for (std::size_t p = 0; p < test_paths; ++p) {
      double w = xt[p];
      if (u.conforming() && !(w > 0.0)) {
        ++ruined;
        w = floor_w;
      }
      acc += u.U(w) / zt[p];
    }
    return acc / static_cast<double>(test_paths);
  };
  rep.eu_combined = eu(x_comb, rep.ruined_combined);
  rep.eu_myopic_only = eu(x_myo, rep.ruined_myopic);
  rep.eu_merton = eu(x_mer, rep.ruined_merton);

  rep.myopic_weight.resize(nn);
  rep.hedge_weight.resize(nn);
  rep.wealth_mean.resize(nn);
  std::vector<double> col(test_paths);
  for (std::size_t k = 0; k < nn; ++k) {
    for (std::size_t p = 0; p < test_paths; ++p) col[p] = w_myo[p * nn + k];
    rep.myopic_weight[k] = summarize(col);
    for (std::size_t p = 0; p < test_paths; ++p) col[p] = w_hed[p * nn + k];
    rep.hedge_weight[k] = summarize(col);
    double acc = 0.0;
    for (std::size_t p = 0; p < test_paths; ++p) acc += wealth[p * nn + k];
    rep.wealth_mean[k] = acc / static_cast<double>(test_paths);
  }
  return rep;
}

DecompositionReport decompose(double x, const MarketModel& model, const UtilityModel& u,
                              const TimeGrid& grid, const McBudget& mc, const HedgeSpec& spec) {
  const SeedSpec seeds{mc.seed};
  const SimulationBundle fit = simulate_bundle_under_Q(model, grid, mc.paths, seeds, 0);
  return decompose_on(x, model, u, fit, spec, seeds, mc.paths, mc.paths);
}

}  // namespace portdec
