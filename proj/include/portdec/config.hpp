#pragma once

// Plain-text run configuration: one `key = value` per line, dotted keys, `#` comments.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "portdec/hedging.hpp"
#include "portdec/market.hpp"
#include "portdec/utility.hpp"

namespace portdec {

enum class RiskKind { constant, ou };
enum class UtilityKind { log, power, exponential };

/// Budgets for the verification studies; independent of the main mc block.
struct VerifyBudget {
  std::size_t eu1_paths = 20000;
  std::size_t eu1_levels = 4;  // finest level is grid.n_steps
  std::size_t budget_paths = 100000;
  std::size_t phi1_paths = 2000;
  std::size_t nested_nodes = 3;
  std::size_t nested_states = 20;
  std::size_t nested_inner = 4000;
  std::vector<double> truncation_ladder{4.0, 8.0, 16.0};
};

struct RunConfig {
  std::string name = "unnamed";

  RiskKind risk_kind = RiskKind::constant;
  std::vector<double> theta{0.4};
  OuRisk ou{};

  std::vector<double> sigma{0.2};  // row-major n x n
  std::vector<double> s0{1.0};

  UtilityKind utility_kind = UtilityKind::log;
  double p = 0.5;
  double a = 1.0;

  double x = 1.0;

  double horizon = 1.0;
  std::size_t n_steps = 512;

  std::size_t n_paths = 50000;
  std::uint64_t seed = 20240917;

  RegressionSpec regression{};
  TruncationRequest truncation{};

  std::string out_dir = "out";
  bool write_csv = true;
  bool write_json = true;

  VerifyBudget verify{};

  std::size_t n() const;
  MarketModel market() const;
  UtilityModel utility() const;
  TimeGrid grid() const;
  HedgeSpec hedge_spec() const;
  SeedSpec seeds() const { return SeedSpec{seed}; }

  /// Effective key/value pairs, defaults included, in a fixed order.
  std::vector<std::pair<std::string, std::string>> echo() const;
};

/// Parses and validates; throws ConfigError naming the line or field.
RunConfig parse_config(const std::string& text);

RunConfig load_config(const std::string& path);

/// Re-runs the range checks; used after command-line overrides.
void validate_config(const RunConfig& c);

}  // namespace portdec
