#include "portdec/utility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "portdec/stats.hpp"

namespace portdec {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double q_of(const PowerUtility& u) { return 1.0 / (u.p - 1.0); }

std::vector<double> log_space(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return out;
}

}  // namespace

UtilityModel::UtilityModel(Variant v) : v_(v) {
  if (const auto* pw = std::get_if<PowerUtility>(&v_)) {
    if (!(pw->p < 1.0) || pw->p == 0.0 || !std::isfinite(pw->p)) {
      throw std::invalid_argument("p must satisfy p<1, p≠0");
    }
  }
  if (const auto* ex = std::get_if<ExponentialUtility>(&v_)) {
    if (!(ex->a > 0.0) || !std::isfinite(ex->a)) {
      throw std::invalid_argument("a must satisfy a>0");
    }
  }
}

std::string UtilityModel::name() const {
  std::ostringstream os;
  std::visit(overloaded{[&](const LogUtility&) { os << "log"; },
                        [&](const PowerUtility& u) { os << "power(p=" << u.p << ")"; },
                        [&](const ExponentialUtility& u) { os << "exponential(a=" << u.a << ")"; }},
             v_);
  return os.str();
}

double UtilityModel::U(double x) const {
  return std::visit(overloaded{[&](const LogUtility&) { return std::log(x); },
                               [&](const PowerUtility& u) { return std::pow(x, u.p) / u.p; },
                               [&](const ExponentialUtility& u) { return -std::exp(-u.a * x); }},
                    v_);
}

double UtilityModel::U1(double x) const {
  return std::visit(
      overloaded{[&](const LogUtility&) { return 1.0 / x; },
                 [&](const PowerUtility& u) { return std::pow(x, u.p - 1.0); },
                 [&](const ExponentialUtility& u) { return u.a * std::exp(-u.a * x); }},
      v_);
}

double UtilityModel::I(double y) const {
  return std::visit(overloaded{[&](const LogUtility&) { return 1.0 / y; },
                               [&](const PowerUtility& u) { return std::pow(y, q_of(u)); },
                               [&](const ExponentialUtility& u) { return std::log(u.a / y) / u.a; }},
                    v_);
}

double UtilityModel::I1(double y) const {
  return std::visit(overloaded{[&](const LogUtility&) { return -1.0 / (y * y); },
                               [&](const PowerUtility& u) {
                                 const double q = q_of(u);
                                 return q * std::pow(y, q - 1.0);
                               },
                               [&](const ExponentialUtility& u) { return -1.0 / (u.a * y); }},
                    v_);
}

double UtilityModel::I2(double y) const {
  return std::visit(overloaded{[&](const LogUtility&) { return 2.0 / (y * y * y); },
                               [&](const PowerUtility& u) {
                                 const double q = q_of(u);
                                 return q * (q - 1.0) * std::pow(y, q - 2.0);
                               },
                               [&](const ExponentialUtility& u) { return 1.0 / (u.a * y * y); }},
                    v_);
}

double UtilityModel::I3(double y) const {
  return std::visit(overloaded{[&](const LogUtility&) { return -6.0 / (y * y * y * y); },
                               [&](const PowerUtility& u) {
                                 const double q = q_of(u);
                                 return q * (q - 1.0) * (q - 2.0) * std::pow(y, q - 3.0);
                               },
                               [&](const ExponentialUtility& u) { return -2.0 / (u.a * y * y * y); }},
                    v_);
}

double UtilityModel::risk_tolerance(double y) const {
  return std::visit(overloaded{[&](const LogUtility&) { return 1.0 / y; },
                               [&](const PowerUtility& u) {
                                 const double q = q_of(u);
                                 return -q * std::pow(y, q);
                               },
                               [&](const ExponentialUtility& u) { return 1.0 / u.a; }},
                    v_);
}

double UtilityModel::F(double z) const {
  // the log case cancels exactly: 1/2 (2/z^3) z^2 - z/z^2 = 0
  return std::visit(overloaded{[&](const LogUtility&) { return 0.0; },
                               [&](const PowerUtility& u) {
                                 const double q = q_of(u);
                                 return 0.5 * q * (q + 1.0) * std::pow(z, q);
                               },
                               [&](const ExponentialUtility& u) { return -0.5 / u.a; }},
                    v_);
}

double UtilityModel::F1(double z) const {
  return std::visit(overloaded{[&](const LogUtility&) { return 0.0; },
                               [&](const PowerUtility& u) {
                                 const double q = q_of(u);
                                 return 0.5 * q * q * (q + 1.0) * std::pow(z, q - 1.0);
                               },
                               [&](const ExponentialUtility&) { return 0.0; }},
                    v_);
}

double correction_integrand(const UtilityModel& u, double z) {
  if (!(z > 0.0)) throw std::invalid_argument("correction_integrand: z must be positive");
  return u.F(z);
}

UtilityValidation validate_utility(const UtilityModel& u, const UtilityGridSpec& spec) {
  UtilityValidation r;
  if (spec.points < 4 || !(spec.x_lo > 0.0) || !(spec.x_hi > spec.x_lo) || !(spec.y_lo > 0.0) ||
      !(spec.y_hi > spec.y_lo)) {
    throw std::invalid_argument("validate_utility: bad grid spec");
  }

  // Inada limits as log-log trends of U' near 0 and towards infinity
  {
    const std::vector<double> xs = log_space(1e-8, 1e-6, 9);
    std::vector<double> ys;
    for (double x : xs) ys.push_back(u.U1(x));
    r.inada_at_zero = loglog_slope(xs, ys) < -1e-3;
    if (!r.inada_at_zero) r.notes.push_back("U'(0+) is finite");
  }
  {
    const std::vector<double> xs = log_space(1e6, 1e8, 9);
    std::vector<double> ys;
    bool underflow = false;
    for (double x : xs) {
      const double v = u.U1(x);
      if (!(v > 0.0)) underflow = true;
      ys.push_back(v);
    }
    r.inada_at_infinity = underflow || loglog_slope(xs, ys) < -1e-3;
    if (!r.inada_at_infinity) r.notes.push_back("U'(infinity) does not vanish");
  }

  const std::vector<double> xs = log_space(spec.x_lo, spec.x_hi, spec.points);
  bool monotone = true;
  double prev = std::numeric_limits<double>::infinity();
  for (double x : xs) {
    const double y = u.U1(x);
    if (!(y > std::numeric_limits<double>::min())) {
      ++r.inversion_skipped;
      continue;
    }
    if (!(y < prev)) monotone = false;
    prev = y;
    r.max_inversion_residual = std::max(r.max_inversion_residual, std::abs(u.I(y) - x) / (1.0 + x));
  }
  r.inversion_ok = r.max_inversion_residual <= 1e-10;
  if (r.inversion_skipped > 0) {
    r.notes.push_back("inversion skipped " + std::to_string(r.inversion_skipped) +
                      " points where U' underflows");
  }

  const std::vector<double> ygrid = log_space(spec.y_lo, spec.y_hi, spec.points);
  std::vector<double> g(ygrid.size());
  prev = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ygrid.size(); ++i) {
    const double y = ygrid[i];
    const double iy = u.I(y);
    if (!(iy < prev)) monotone = false;
    prev = iy;
    g[i] = std::max({y * y * std::abs(u.I2(y)), u.risk_tolerance(y), iy});
  }
  r.monotone = monotone;

  // growth bound g(y) < k1 y^{-alpha}: the tail slopes of log g must agree and be negative
  const std::size_t tail = std::max<std::size_t>(2, spec.points / 8);
  const std::span<const double> yv(ygrid), gv(g);
  const bool positive = std::all_of(g.begin(), g.end(), [](double v) { return v > 0.0; });
  if (positive) {
    const double s_lo = loglog_slope(yv.first(tail), gv.first(tail));
    const double s_hi = loglog_slope(yv.last(tail), gv.last(tail));
    r.growth_alpha = -0.5 * (s_lo + s_hi);
    r.growth_ok = s_lo < 0.0 && s_hi < 0.0 && std::abs(s_lo - s_hi) <= 0.25;
    if (r.growth_ok) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        r.growth_k1 = std::max(r.growth_k1, g[i] * std::pow(ygrid[i], r.growth_alpha));
      }
    }
  }
  if (!r.growth_ok) r.notes.push_back("no power bound k1 y^-alpha fits the sampled range");

  r.conforming = r.inada_at_zero && r.inada_at_infinity && r.monotone && r.inversion_ok && r.growth_ok;
  return r;
}

}  // namespace portdec
