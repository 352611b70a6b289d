#pragma once

// Utility families with closed-form marginal inverse I = (U')^{-1} and the
// correction integrand F(z) = 1/2 I''(z) z^2 + I'(z) z.

#include <string>
#include <variant>
#include <vector>

namespace portdec {

struct LogUtility {};

/// U(x) = x^p / p with p < 1, p != 0.
struct PowerUtility {
  double p = 0.5;
};

/// U(x) = -exp(-a x) with a > 0. Violates the Inada condition at 0.
struct ExponentialUtility {
  double a = 1.0;
};

class UtilityModel {
 public:
  using Variant = std::variant<LogUtility, PowerUtility, ExponentialUtility>;

  explicit UtilityModel(Variant v);
  static UtilityModel log() { return UtilityModel(LogUtility{}); }
  static UtilityModel power(double p) { return UtilityModel(PowerUtility{p}); }
  static UtilityModel exponential(double a) { return UtilityModel(ExponentialUtility{a}); }

  const Variant& variant() const noexcept { return v_; }
  bool is_log() const noexcept { return std::holds_alternative<LogUtility>(v_); }
  std::string name() const;

  /// False for families outside the standing assumptions (exponential).
  bool conforming() const noexcept { return !std::holds_alternative<ExponentialUtility>(v_); }

  double U(double x) const;
  double U1(double x) const;  // U'
  double I(double y) const;
  double I1(double y) const;  // I'
  double I2(double y) const;  // I''
  double I3(double y) const;  // I'''

  /// -y I'(y), the myopic risk-tolerance factor; finite for every y > 0.
  double risk_tolerance(double y) const;

  /// F(z) and F'(z) from the closed forms.
  double F(double z) const;
  double F1(double z) const;

 private:
  Variant v_;
};

/// F(z) = 1/2 I''(z) z^2 + I'(z) z; throws std::invalid_argument for z <= 0.
double correction_integrand(const UtilityModel& u, double z);

/// Sampling ranges for validate_utility.
struct UtilityGridSpec {
  double x_lo = 1e-4;
  double x_hi = 1e4;
  double y_lo = 1e-4;
  double y_hi = 1e4;
  std::size_t points = 161;
};

struct UtilityValidation {
  bool inada_at_zero = false;      // U'(0+) = infinity
  bool inada_at_infinity = false;  // U'(infinity) = 0
  bool monotone = false;           // U' and I strictly decreasing
  double max_inversion_residual = 0.0;  // max |I(U'(x)) - x| / (1 + x)
  bool inversion_ok = false;
  std::size_t inversion_skipped = 0;  // x where U'(x) underflows
  bool growth_ok = false;
  double growth_k1 = 0.0;
  double growth_alpha = 0.0;
  bool conforming = false;
  std::vector<std::string> notes;
};

/// Inada trends, inversion residuals and the power-growth bound on I.
UtilityValidation validate_utility(const UtilityModel& u, const UtilityGridSpec& spec = {});

}  // namespace portdec
