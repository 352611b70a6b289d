#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace portdec {

/// A non-finite value appeared while integrating a path.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t path, std::size_t step)
      : std::runtime_error(what + " (path " + std::to_string(path) + ", step " +
                           std::to_string(step) + ")"),
        path_(path),
        step_(step) {}

  std::size_t path() const noexcept { return path_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t path_;
  std::size_t step_;
};

/// The per-node conditional expectation regression could not be solved.
class EstimationError : public std::runtime_error {
 public:
  EstimationError(const std::string& what, std::size_t node)
      : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

/// Bracketing failed for the budget split root search.
class RootNotFoundError : public std::runtime_error {
 public:
  RootNotFoundError(const std::string& what, double h_lo, double h_hi)
      : std::runtime_error(what), h_lo_(h_lo), h_hi_(h_hi) {}
  double h_lo() const noexcept { return h_lo_; }
  double h_hi() const noexcept { return h_hi_; }

 private:
  double h_lo_;
  double h_hi_;
};

/// Configuration text could not be parsed or failed validation.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace portdec
