#pragma once

// Pass/fail tolerances shared by `verify` and the acceptance suite.

namespace portdec::thresholds {

inline constexpr double eu1_decay_factor = 1.3;    // per dt halving
inline constexpr double eu1_finest_rms_rel = 0.01;  // of x

inline constexpr double log_F_abs = 1e-12;
inline constexpr double log_weight_abs = 1e-10;

inline constexpr double budget_se = 3.0;

inline constexpr double residual_ratio_constant = 0.05;
inline constexpr double residual_ratio_ou = 0.10;
inline constexpr double beta_oracle_rel_rmse = 0.05;
inline constexpr double tower_se = 4.0;
inline constexpr double nested_se = 3.0;

inline constexpr double terminal_rel_rms_constant = 0.05;
inline constexpr double terminal_rel_rms_ou = 0.10;

inline constexpr double xstar_bisection_rel = 1e-8;
inline constexpr double xstar_se = 3.0;

inline constexpr double fd_slope_lo = 1.7;
inline constexpr double fd_slope_hi = 2.3;

inline constexpr double phi1_decay_factor = 1.3;

inline constexpr double truncation_rel_diff = 0.01;

inline constexpr double verify_runtime_seconds = 900.0;

}  // namespace portdec::thresholds
