#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "portdec/utility.hpp"

using namespace portdec;

TEST_CASE("log utility has a vanishing correction integrand") {
  const UtilityModel u = UtilityModel::log();
  for (double z = 1e-6; z <= 1e6; z *= 1.37) {
    CHECK(std::abs(u.F(z)) <= 1e-12);
    CHECK(std::abs(u.F1(z)) <= 1e-12);
  }
  CHECK(u.I(2.0) == 0.5);
  CHECK(u.risk_tolerance(4.0) == doctest::Approx(0.25));
}

TEST_CASE("power utility closed forms") {
  const UtilityModel u = UtilityModel::power(0.5);
  // F(z) = z^{1/(p-1)} p / (2 (p-1)^2) = z^{-2}
  CHECK(u.F(0.5) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(u.F(1.0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(u.F(2.0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(u.F1(2.0) == doctest::Approx(-0.25).epsilon(1e-14));
  CHECK(u.I(u.U1(3.0)) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(u.risk_tolerance(1.0) == doctest::Approx(2.0));

  // V_x integrand at z = U'(x) Z equals x p / (2 (p-1)^2) Z^{1/(p-1)}
  const double x = 2.5, zt = 0.8;
  CHECK(u.F(u.U1(x) * zt) == doctest::Approx(x * 0.5 / (2 * 0.25) * std::pow(zt, -2.0)).epsilon(1e-13));
}

TEST_CASE("correction integrand against central differences") {
  for (const UtilityModel& u : {UtilityModel::log(), UtilityModel::power(0.5), UtilityModel::power(-2.0),
                                UtilityModel::exponential(1.0)}) {
    for (double z : {0.5, 1.0, 2.0}) {
      const double h = 1e-4 * z;
      const double d1 = (u.I(z + h) - u.I(z - h)) / (2 * h);
      const double d2 = (u.I(z + h) - 2 * u.I(z) + u.I(z - h)) / (h * h);
      const double fd = 0.5 * z * z * d2 + z * d1;
      const double exact = u.F(z);
      CHECK(std::abs(fd - exact) <= 1e-6 * std::max(1.0, std::abs(exact)));
      CHECK(correction_integrand(u, z) == doctest::Approx(exact).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(correction_integrand(UtilityModel::log(), 0.0), std::invalid_argument);
}

TEST_CASE("exponential utility") {
  const UtilityModel u = UtilityModel::exponential(2.0);
  CHECK(u.F(0.3) == doctest::Approx(-0.25));
  CHECK(u.F(7.0) == doctest::Approx(-0.25));
  CHECK(u.F1(1.0) == 0.0);
  CHECK(u.risk_tolerance(0.1) == doctest::Approx(0.5));
  CHECK(u.I(u.U1(-1.5)) == doctest::Approx(-1.5).epsilon(1e-13));
  CHECK_FALSE(u.conforming());
}

TEST_CASE("utility validation") {
  const UtilityValidation l = validate_utility(UtilityModel::log());
  CHECK(l.inada_at_zero);
  CHECK(l.inada_at_infinity);
  CHECK(l.monotone);
  CHECK(l.inversion_ok);
  CHECK(l.growth_ok);
  CHECK(l.conforming);

  const UtilityValidation pw = validate_utility(UtilityModel::power(0.5));
  CHECK(pw.conforming);
  CHECK(pw.growth_alpha == doctest::Approx(2.0).epsilon(1e-6));

  const UtilityValidation ex = validate_utility(UtilityModel::exponential(1.0));
  CHECK_FALSE(ex.inada_at_zero);
  CHECK_FALSE(ex.conforming);
  CHECK(ex.inversion_ok);
  CHECK_FALSE(ex.notes.empty());
}

TEST_CASE("parameter checks") {
  CHECK_THROWS_AS(UtilityModel::power(1.0), std::invalid_argument);
  CHECK_THROWS_AS(UtilityModel::power(0.0), std::invalid_argument);
  CHECK_THROWS_AS(UtilityModel::exponential(0.0), std::invalid_argument);
}
