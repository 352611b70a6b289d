#include "portdec/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <variant>

#include "portdec/errors.hpp"
#include "portdec/parallel.hpp"
#include "portdec/stats.hpp"
#include "portdec/thresholds.hpp"

namespace portdec {

namespace {

constexpr std::size_t kChunk = 1024;

// body(p, slot) for p in [0, n), chunk by chunk; reduce(p, slot) runs in path order after each chunk
template <class Body, class Reduce>
void chunked_paths(std::size_t n, Body&& body, Reduce&& reduce) {
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t len = std::min(kChunk, n - begin);
    parallel_for(len, [&](std::size_t i) { body(begin + i, i); });
    for (std::size_t i = 0; i < len; ++i) reduce(begin + i, i);
  }
}

std::vector<double> ratios(const std::vector<double>& v) {
  std::vector<double> out;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) out.push_back(v[i] / v[i + 1]);
  return out;
}

double rel_diff(double a, double b) {
  const double d = std::abs(a - b);
  return d == 0.0 ? 0.0 : d / std::max(std::abs(a), std::abs(b));
}

double rel_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return num == 0.0 ? 0.0 : std::sqrt(num / den);
}

void check_ladder(const std::vector<std::size_t>& steps) {
  if (steps.size() < 2) throw std::invalid_argument("a refinement ladder needs at least two levels");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] == 0 || steps.back() % steps[i] != 0 || (i > 0 && steps[i] <= steps[i - 1])) {
      throw std::invalid_argument("ladder steps must increase and divide the finest level");
    }
  }
}

double positive_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  std::vector<double> a, b;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] > 0.0 && ys[i] > 0.0) {
      a.push_back(xs[i]);
      b.push_back(ys[i]);
    }
  }
  return a.size() >= 2 ? loglog_slope(a, b) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

Json to_json(const Check& c) {
  Json j;
  j["id"] = c.id;
  j["title"] = c.title;
  j["pass"] = c.pass;
  j["detail"] = c.detail;
  j["metrics"] = c.metrics;
  return j;
}

// ------------------------------------------------------------ eu1 refinement

std::vector<std::size_t> halving_ladder(std::size_t finest_steps, std::size_t levels) {
  std::vector<std::size_t> out;
  for (std::size_t l = levels; l-- > 0;) {
    const std::size_t f = std::size_t{1} << l;
    if (finest_steps % f != 0) throw std::invalid_argument("finest step count is not divisible by 2^(levels-1)");
    out.push_back(finest_steps / f);
  }
  return out;
}

Eu1Refinement eu1_refinement(const MarketModel& model, const UtilityModel& u, double x, double horizon,
                             const std::vector<std::size_t>& steps, std::size_t n_paths, const SeedSpec& seeds) {
  check_ladder(steps);
  const std::size_t n = model.n();
  const std::size_t levels = steps.size();
  const TimeGrid fine = make_grid(horizon, steps.back());
  std::vector<TimeGrid> grids;
  for (std::size_t s : steps) grids.push_back(make_grid(horizon, s));
  const std::size_t nn_fine = fine.n_nodes();

  Eu1Refinement r;
  r.steps = steps;
  r.n_paths = n_paths;
  for (const TimeGrid& g : grids) r.dt.push_back(g.dt());
  std::vector<double> sum_sq(levels, 0.0);
  r.max_abs.assign(levels, 0.0);
  std::vector<double> node_sq(nn_fine, 0.0);

  std::vector<double> path_sq(kChunk * levels), path_max(kChunk * levels), fine_resid(kChunk * nn_fine);
  chunked_paths(
      n_paths,
      [&](std::size_t p, std::size_t slot) {
        std::vector<double> w(nn_fine * n);
        brownian_path(fine, n, seeds, p, w);
        for (std::size_t l = 0; l < levels; ++l) {
          const TimeGrid& g = grids[l];
          const std::size_t factor = steps.back() / steps[l];
          PathSample s(g, n);
          for (std::size_t k = 0; k < g.n_nodes(); ++k) {
            for (std::size_t d = 0; d < n; ++d) s.W[k * n + d] = w[k * factor * n + d];
          }
          complete_path_under_P(model, g, s, p);
          std::vector<double> resid(g.n_nodes());
          eu1_residual_path(x, s.view(g, n), model, u, resid);
          double sq = 0.0, mx = 0.0;
          for (double v : resid) {
            sq += v * v;
            mx = std::max(mx, std::abs(v));
          }
          path_sq[slot * levels + l] = sq;
          path_max[slot * levels + l] = mx;
          if (l + 1 == levels) std::copy(resid.begin(), resid.end(), fine_resid.begin() + static_cast<std::ptrdiff_t>(slot * nn_fine));
        }
      },
      [&](std::size_t, std::size_t slot) {
        for (std::size_t l = 0; l < levels; ++l) {
          sum_sq[l] += path_sq[slot * levels + l];
          r.max_abs[l] = std::max(r.max_abs[l], path_max[slot * levels + l]);
        }
        for (std::size_t k = 0; k < nn_fine; ++k) node_sq[k] += fine_resid[slot * nn_fine + k] * fine_resid[slot * nn_fine + k];
      });

  for (std::size_t l = 0; l < levels; ++l) {
    r.rms.push_back(std::sqrt(sum_sq[l] / static_cast<double>(n_paths * grids[l].n_nodes())));
  }
  r.factors = ratios(r.rms);
  r.slope = positive_slope(r.dt, r.rms);
  for (double s : node_sq) r.finest_rms_per_node.push_back(std::sqrt(s / static_cast<double>(n_paths)));
  return r;
}

// --------------------------------------------------------- budget martingale

double default_hitting_level(const MarketModel& model, const TimeGrid& grid) {
  const std::vector<double> w((grid.n_nodes()) * model.n(), 0.0);
  return model.risk().evaluate(grid, 0, std::span<const double>(w).first(model.n()))[0] + 0.1;
}

std::vector<BudgetResult> budget_study(const MarketModel& model, const UtilityModel& u, double x,
                                       const TimeGrid& grid, std::size_t n_paths, const SeedSpec& seeds,
                                       const std::vector<StoppingRule>& rules) {
  const std::size_t n = model.n();
  const std::size_t nr = rules.size();
  std::vector<double> samples(n_paths * nr);
  parallel_for(n_paths, [&](std::size_t p) {
    PathSample s(grid, n);
    brownian_path(grid, n, seeds, p, s.W);
    complete_path_under_P(model, grid, s, p);
    const PathView v = s.view(grid, n);
    std::vector<double> xw(grid.n_nodes());
    myopic_wealth_path(x, v, model, u, xw);
    for (std::size_t r = 0; r < nr; ++r) {
      const std::size_t k = stopping_node(rules[r], v);
      samples[r * n_paths + p] = v.z(k) * xw[k];
    }
  });
  std::vector<BudgetResult> out;
  for (std::size_t r = 0; r < nr; ++r) {
    BudgetResult b;
    b.rule = rules[r];
    b.estimate = mean_estimate(std::span<const double>(samples).subspan(r * n_paths, n_paths));
    b.z = b.estimate.z_score(x);
    out.push_back(b);
  }
  return out;
}

// ------------------------------------------------------- variational flow

Phi1Refinement phi1_refinement(const MarketModel& model, double horizon, const std::vector<std::size_t>& steps,
                               std::size_t n_paths, const SeedSpec& seeds) {
  check_ladder(steps);
  const std::size_t n = model.n();
  const TimeGrid fine = make_grid(horizon, steps.back());
  const PathEnsemble wt = sample_brownian(fine, n, n_paths, seeds, Measure::QTilde);
  Phi1Refinement r;
  r.steps = steps;
  for (std::size_t li = 0; li < steps.size(); ++li) {
    const std::size_t factor = steps.back() / steps[li];
    const SimulationBundle b = build_bundle_under_Q(model, factor == 1 ? wt : coarsen(wt, factor));
    r.dt.push_back(b.grid.dt());
    double sq = 0.0, sq_cols = 0.0;
    std::size_t cnt = 0, cnt_cols = 0;
    for (std::size_t s : {std::size_t{0}, b.grid.nearest_node(0.5 * horizon)}) {
      const Phi2Block phi2 = solve_phi2(s, model.risk(), b.grid);
      const Phi1Block euler = solve_phi1(s, b, phi2);
      const Phi1Block closed = phi1_closed_form(s, b, phi2);
      for (std::size_t p = 0; p < b.n_paths(); ++p) {
        for (std::size_t k = s; k < b.grid.n_nodes(); ++k) {
          const double e = euler.at(p, 0, k) - closed.at(p, 0, k);
          sq += e * e;
          ++cnt;
          for (std::size_t j = 1; j <= n; ++j) {
            const double ej = euler.at(p, j, k) - closed.at(p, j, k);
            sq_cols += ej * ej;
            ++cnt_cols;
          }
        }
      }
    }
    r.rms_error.push_back(std::sqrt(sq / static_cast<double>(cnt)));
    r.rms_error_cols.push_back(std::sqrt(sq_cols / static_cast<double>(cnt_cols)));
  }
  r.factors = ratios(r.rms_error);
  return r;
}

// ------------------------------------------------------------- FD oracles

FdOracles fd_oracles(const MarketModel& model, const UtilityModel& u, double x, const TimeGrid& grid,
                     const SeedSpec& seeds) {
  const std::size_t n = model.n();
  const std::size_t nn = grid.n_nodes();
  std::vector<double> w(nn * n), dir(nn * n);
  brownian_path(grid, n, seeds, 0, w);
  brownian_path(grid, n, seeds, 1, dir);
  const std::vector<double> theta = model.risk().theta_path(grid, w);
  const std::vector<double> z = stochastic_exponential(grid, n, theta, w);
  std::vector<double> v1(nn), zero1(nn, 0.0), zero2(nn * n, 0.0);
  for (std::size_t k = 0; k < nn; ++k) v1[k] = z[k] * std::sin(std::numbers::pi * grid.time(k) / grid.horizon());

  FdOracles o;
  const std::vector<double> eps_theta{1e-1, 1e-2, 1e-3};
  const std::vector<double> eps_l{1e-2, 1e-3, 1e-4};
  o.frechet = frechet_fd_check(model.risk(), grid, w, dir, eps_theta);
  o.l_z = functional_L_fd_check(x, u, model.risk(), grid, z, w, v1, zero2, eps_l);
  o.l_w = functional_L_fd_check(x, u, model.risk(), grid, z, w, zero1, dir, eps_l);
  o.l_joint = functional_L_fd_check(x, u, model.risk(), grid, z, w, v1, dir, eps_l);
  return o;
}

bool fd_slope_ok(const FdReport& r) {
  return r.at_roundoff || (r.slope >= thresholds::fd_slope_lo && r.slope <= thresholds::fd_slope_hi);
}

// ------------------------------------------------------------ log utility

LogDegeneracy log_degeneracy(const MarketModel& model, const UtilityModel& u, double x,
                             const SimulationBundle& qbundle, const HedgeSpec& spec) {
  if (!u.is_log()) throw std::invalid_argument("log_degeneracy: log utility required");
  LogDegeneracy r;
  for (std::size_t i = 0; i < 1000; ++i) {
    const double z = std::exp(std::log(1e-6) + std::log(1e12) * static_cast<double>(i) / 999.0);
    r.max_abs_F = std::max(r.max_abs_F, std::abs(u.F(z)));
  }
  const SimulationBundle& b = qbundle;
  const std::size_t n = model.n();
  const std::size_t nn = b.grid.n_nodes();
  const LambdaEngine engine(x, u, model.risk(), b.grid, {});
  const HedgeResult h = run_hedge(x, model, u, b, spec);
  r.short_circuited = engine.trivially_zero() && h.short_circuited;

  std::vector<double> v_max(b.n_paths()), l_max(b.n_paths()), b_max(b.n_paths()), pb_max(b.n_paths()),
      w_dev(b.n_paths());
  parallel_for(b.n_paths(), [&](std::size_t p) {
    const PathView v = b.view(p);
    std::vector<double> vp(nn), lam(nn * n), beta(n), pib(n), units(n);
    correction_path(x, v, u, vp);
    engine.lambda_path(v, lam);
    for (double e : vp) v_max[p] = std::max(v_max[p], std::abs(e));
    for (double e : lam) l_max[p] = std::max(l_max[p], std::abs(e));
    for (std::size_t k = 0; k < nn; ++k) {
      h.model.predict(k, v.z(k), v.theta.subspan(k * n, n), beta);
      hedging_units_from_beta(model, beta, v.S.subspan(k * n, n), pib);
      myopic_units_at(x, v, model, u, k, units);
      const double wealth = u.I(u.U1(x) * v.z(k));
      for (std::size_t i = 0; i < n; ++i) {
        b_max[p] = std::max(b_max[p], std::abs(beta[i]));
        pb_max[p] = std::max(pb_max[p], std::abs(pib[i]));
        double zeta = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          zeta += model.sigma_inv_t()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * v.th(k, j);
        }
        w_dev[p] = std::max(w_dev[p], std::abs(units[i] * v.s(k, i) / wealth - zeta));
      }
    }
  });
  for (std::size_t p = 0; p < b.n_paths(); ++p) {
    r.max_abs_V = std::max(r.max_abs_V, v_max[p]);
    r.max_abs_lambda = std::max(r.max_abs_lambda, l_max[p]);
    r.max_abs_beta = std::max(r.max_abs_beta, b_max[p]);
    r.max_abs_pi_bar = std::max(r.max_abs_pi_bar, pb_max[p]);
    r.max_weight_dev = std::max(r.max_weight_dev, w_dev[p]);
  }
  const XStarResult xs = solve_xstar(x, b, u);
  r.xstar = xs.xstar;
  r.xstar_exact = xs.exact && xs.xstar == x;
  return r;
}

// ----------------------------------------------------------------- hedging

std::vector<double> constant_crra_beta(const UtilityModel& u, double x, std::span<const double> theta,
                                       double z, double tau) {
  const auto* pw = std::get_if<PowerUtility>(&u.variant());
  if (!pw) throw std::invalid_argument("constant_crra_beta: power utility required");
  const double p = pw->p;
  const double q = 1.0 / (p - 1.0);
  double th2 = 0.0;
  for (double t : theta) th2 += t * t;
  const double k = x * p * th2 / (2.0 * (p - 1.0) * (p - 1.0));
  const double a = 0.5 * q * (q + 1.0) * th2;
  const double g = a != 0.0 ? std::expm1(a * tau) / a : tau;
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = -k * q * theta[i] * std::pow(z, q) * g;
  return out;
}

BetaOracle beta_oracle_constant_crra(const HedgeResult& h, const SimulationBundle& qbundle,
                                     const MarketModel& model, const UtilityModel& u, double x) {
  if (!model.risk().is_constant()) throw std::invalid_argument("beta oracle: constant theta required");
  const SimulationBundle& b = qbundle;
  const std::size_t n = model.n();
  const std::size_t nn = b.grid.n_nodes();
  std::vector<double> num(b.n_paths()), den(b.n_paths());
  std::vector<double> oracle_sum(nn * b.n_paths());
  parallel_for(b.n_paths(), [&](std::size_t p) {
    const PathView v = b.view(p);
    std::vector<double> bh(n);
    for (std::size_t k = 0; k + 1 < nn; ++k) {
      const auto th = v.theta.subspan(k * n, n);
      const std::vector<double> o = constant_crra_beta(u, x, th, v.z(k), b.grid.horizon() - b.grid.time(k));
      h.model.predict(k, v.z(k), th, bh);
      for (std::size_t i = 0; i < n; ++i) {
        num[p] += (bh[i] - o[i]) * (bh[i] - o[i]);
        den[p] += o[i] * o[i];
      }
      oracle_sum[p * nn + k] = o[0];
    }
  });
  BetaOracle r;
  double sn = 0.0, sd = 0.0;
  for (std::size_t p = 0; p < b.n_paths(); ++p) {
    sn += num[p];
    sd += den[p];
  }
  r.rel_rmse = sd > 0.0 ? std::sqrt(sn / sd) : 0.0;
  r.samples = b.n_paths() * (nn - 1);
  r.oracle_mean.assign(nn, 0.0);
  for (std::size_t k = 0; k < nn; ++k) {
    double acc = 0.0;
    for (std::size_t p = 0; p < b.n_paths(); ++p) acc += oracle_sum[p * nn + k];
    r.oracle_mean[k] = acc / static_cast<double>(b.n_paths());
  }
  return r;
}

XStarCheck xstar_check(double x, const SimulationBundle& qbundle, const UtilityModel& u) {
  XStarCheck c;
  c.result = solve_xstar(x, qbundle, u);
  const double bisect_tol = thresholds::xstar_bisection_rel * x;
  if (u.is_log()) {
    c.reference = "exact";
    c.expected = x;
    c.tolerance = 0.0;
    c.difference = std::abs(c.result.xstar - x);
    c.pass = c.result.exact && c.difference == 0.0;
  } else if (std::holds_alternative<PowerUtility>(u.variant())) {
    // V_z is linear in z, so z + E V_z = z (1 + c)
    c.reference = "closed_form";
    const MeanEstimate cm = expected_correction(1.0, qbundle, u);
    c.expected = x / (1.0 + cm.mean);
    c.tolerance = bisect_tol + thresholds::xstar_se * cm.se * x / ((1.0 + cm.mean) * (1.0 + cm.mean));
    c.difference = std::abs(c.result.xstar - c.expected);
    c.pass = c.difference <= c.tolerance;
  } else {
    // F does not depend on its argument, so E V_z is the same for every z
    c.reference = "shift";
    const MeanEstimate ev = expected_correction(x, qbundle, u);
    c.expected = x - ev.mean;
    c.tolerance = bisect_tol + thresholds::xstar_se * ev.se;
    c.difference = std::abs(c.result.xstar - c.expected);
    c.pass = c.difference <= c.tolerance;
  }
  return c;
}

std::vector<NestedProbe> nested_mc_check(double x, const MarketModel& model, const UtilityModel& u,
                                         const SimulationBundle& qbundle, const HedgeResult& h,
                                         std::size_t n_nodes, std::size_t states, std::size_t inner,
                                         const SeedSpec& seeds) {
  const SimulationBundle& b = qbundle;
  const std::size_t n = model.n();
  const std::size_t N = b.grid.n_steps();
  std::vector<NestedProbe> out;
  std::size_t probe_id = 0;
  for (std::size_t j = 1; j <= n_nodes; ++j) {
    const std::size_t k = N * j / (n_nodes + 1);
    if (k == 0 || k >= N) continue;
    const TimeGrid sub = make_grid(b.grid.horizon() - b.grid.time(k), N - k);
    for (std::size_t s = 0; s < states; ++s, ++probe_id) {
      NestedProbe pr;
      pr.node = k;
      pr.path = s * (b.n_paths() / states);
      const PathView v = b.view(pr.path);
      const auto th = v.theta.subspan(k * n, n);
      const auto st = v.S.subspan(k * n, n);
      pr.z = v.z(k);
      pr.theta = th[0];
      std::vector<double> bh(n);
      h.model.predict(k, pr.z, th, bh);
      pr.predicted = bh[0];
      pr.predicted_se = h.model.predict_se(k, pr.z, th)[0];

      const MarketModel restarted = model.with_state({st.begin(), st.end()}, th);
      const LambdaEngine engine(x, u, restarted.risk(), sub, h.truncation);
      const SeedSpec inner_seeds{seeds.master_seed ^ (0x9E3779B97F4A7C15ULL * (probe_id + 1))};
      std::vector<double> lam(inner);
      parallel_for(inner, [&](std::size_t i) {
        PathSample ps(sub, n);
        brownian_path(sub, n, inner_seeds, i, ps.Wtilde);
        complete_path_under_Q(restarted, sub, ps, i);
        for (double& z : ps.Z) z *= pr.z;
        lam[i] = engine.lambda_at(ps.view(sub, n), 0)[0];
      });
      const MeanEstimate m = mean_estimate(lam);
      pr.nested = m.mean;
      pr.nested_se = m.se;
      const double se = std::hypot(pr.predicted_se, pr.nested_se);
      const double diff = std::abs(pr.predicted - pr.nested);
      pr.score = diff == 0.0 ? 0.0 : (se > 0.0 ? diff / se : std::numeric_limits<double>::infinity());
      out.push_back(pr);
    }
  }
  return out;
}

TruncationLadder truncation_ladder(double x, const MarketModel& model, const UtilityModel& u,
                                   const SimulationBundle& qbundle, HedgeSpec spec, const SeedSpec& seeds,
                                   std::size_t test_first_path, std::size_t test_paths,
                                   const std::vector<double>& multiples, const XStarResult* known_xstar) {
  TruncationLadder t;
  t.multiples = multiples;
  const XStarResult xs = known_xstar ? *known_xstar : solve_xstar(x, qbundle, u);
  for (double m : multiples) {
    spec.truncation = {TruncationRequest::Mode::multiple, m};
    const DecompositionReport rep =
        decompose_on(x, model, u, qbundle, spec, seeds, test_first_path, test_paths, &xs);
    t.k_theta.push_back(rep.hedge.truncation.k_theta);
    t.k_z.push_back(rep.hedge.truncation.k_z);
    t.terminal_relative_rms.push_back(rep.terminal_relative_rms);
    t.eu_combined.push_back(rep.eu_combined);
    t.beta_mean.push_back(rep.hedge.beta_mean);
  }
  t.pass = true;
  for (std::size_t i = 0; i + 1 < multiples.size(); ++i) {
    const double d = std::max({rel_diff(t.terminal_relative_rms[i], t.terminal_relative_rms[i + 1]),
                               rel_diff(t.eu_combined[i], t.eu_combined[i + 1]),
                               rel_diff(t.beta_mean[i], t.beta_mean[i + 1])});
    t.max_rel_diff.push_back(d);
    if (!(d <= thresholds::truncation_rel_diff)) t.pass = false;
  }
  return t;
}

// ------------------------------------------------------- convergence studies

Json to_json(const SlopeTable& t) {
  Json j;
  j["parameter"] = t.parameter;
  j["metric"] = t.metric;
  Json rows = Json::array();
  for (std::size_t i = 0; i < t.params.size(); ++i) {
    rows.push_back({{"param", number_or_null(t.params[i])}, {"value", number_or_null(t.values[i])}});
  }
  j["rows"] = rows;
  j["loglog_slope"] = number_or_null(t.slope);
  return j;
}

SlopeTable convergence_study(const RunConfig& config, const Ladder& ladder) {
  if (ladder.values.empty()) throw std::invalid_argument("convergence_study: empty ladder");
  const MarketModel model = config.market();
  const UtilityModel u = config.utility();
  const TimeGrid grid = config.grid();
  const SeedSpec seeds = config.seeds();
  SlopeTable t;
  t.params = ladder.values;
  switch (ladder.kind) {
    case Ladder::Kind::dt_halvings: {
      std::vector<std::size_t> steps;
      for (double v : ladder.values) steps.push_back(static_cast<std::size_t>(v));
      const Eu1Refinement r = eu1_refinement(model, u, config.x, config.horizon, steps,
                                             config.verify.eu1_paths, seeds);
      t.parameter = "dt";
      t.metric = "eu1_rms";
      t.params = r.dt;
      t.values = r.rms;
      break;
    }
    case Ladder::Kind::basis_degrees: {
      const SimulationBundle b = simulate_bundle_under_Q(model, grid, config.n_paths, seeds);
      t.parameter = "degree";
      t.metric = "residual_variance_ratio";
      for (double d : ladder.values) {
        HedgeSpec spec = config.hedge_spec();
        spec.regression.degree = static_cast<int>(d);
        t.values.push_back(run_hedge(config.x, model, u, b, spec).residual_ratio);
      }
      break;
    }
    case Ladder::Kind::truncation_levels: {
      const SimulationBundle b = simulate_bundle_under_Q(model, grid, config.n_paths, seeds);
      const TruncationLadder tl = truncation_ladder(config.x, model, u, b, config.hedge_spec(), seeds,
                                                    config.n_paths, config.n_paths, ladder.values);
      t.parameter = "truncation_multiple";
      t.metric = "terminal_relative_rms";
      t.values = tl.terminal_relative_rms;
      break;
    }
    case Ladder::Kind::path_doublings: {
      std::size_t most = 0;
      for (double v : ladder.values) most = std::max(most, static_cast<std::size_t>(v));
      const SimulationBundle b = simulate_bundle_under_Q(model, grid, most, seeds);
      std::vector<double> vt(most);
      parallel_for(most, [&](std::size_t p) { vt[p] = correction_terminal(config.x, b.view(p), u); });
      t.parameter = "n_paths";
      t.metric = "se_expected_correction";
      for (double v : ladder.values) {
        t.values.push_back(mean_estimate(std::span<const double>(vt).first(static_cast<std::size_t>(v))).se);
      }
      break;
    }
  }
  t.slope = positive_slope(t.params, t.values);
  return t;
}

}  // namespace portdec
