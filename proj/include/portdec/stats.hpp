#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace portdec {

/// Sample mean with its standard error and sample size.
struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;

  /// |mean - target| in units of se (infinite when se == 0 and mean != target).
  double z_score(double target) const;
};

/// Welford accumulator; samples are folded in the order they are pushed.
class RunningMoments {
 public:
  void push(double x);
  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  double variance() const;  // unbiased
  MeanEstimate estimate() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

MeanEstimate mean_estimate(std::span<const double> xs);
double sample_variance(std::span<const double> xs);
double rms(std::span<const double> xs);

/// Empirical quantile with linear interpolation, q in [0, 1].
double quantile(std::vector<double> xs, double q);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace portdec
