#pragma once

// The five CLI commands as library calls. Each returns its summary and series
// without touching the filesystem; `execute` adds output files and exit codes.

#include <ostream>
#include <string>
#include <vector>

#include "portdec/config.hpp"
#include "portdec/report.hpp"
#include "portdec/verification.hpp"

namespace portdec {

inline constexpr const char* tool_name = "portdec";
inline constexpr const char* tool_version = "1.0.0";

enum class Command { simulate, myopic, hedge, decompose, verify };

std::string to_string(Command c);
/// Throws ConfigError for an unknown name.
Command parse_command(const std::string& name);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int check_failed = 1;
inline constexpr int config_error = 2;
inline constexpr int numeric_failure = 3;
}  // namespace exit_code

struct CommandResult {
  Json summary;  // header, results and checks
  std::vector<Series> series;
  std::vector<Check> checks;

  bool all_pass() const;
};

/// Runs one command; progress goes to `log`. Exceptions propagate.
CommandResult run_command(Command c, const RunConfig& config, std::ostream& log);

/// Writes the enabled output formats into config.out_dir.
void write_outputs(const CommandResult& r, const RunConfig& config);

/// run_command + write_outputs with exceptions mapped to exit codes.
int execute(Command c, const RunConfig& config, std::ostream& log, std::ostream& err);

// ------------------------------------------------------------- myopic stream

/// Per-node statistics of the myopic strategy streamed under P.
struct MyopicStream {
  std::size_t n_paths = 0;
  std::vector<double> weight_mean;  // pi-tilde S / X, first asset
  std::vector<double> wealth_mean;
  std::vector<double> v_mean;
  std::vector<double> eu1_rms;  // per node
  double eu1_rms_all = 0.0;
  AdmissibilityReport admissibility;  // X + V > 0
};

MyopicStream myopic_stream(const RunConfig& config, std::size_t n_paths);

/// The config-scoped check table behind `verify`.
std::vector<Check> verify_checks(const RunConfig& config, std::ostream& log, std::vector<Series>& series);

}  // namespace portdec
