#pragma once

// Time grids, Brownian ensembles and a generic Euler step for path-dependent SDEs.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "portdec/errors.hpp"

namespace portdec {

/// Uniform grid t_0 = 0 < t_1 < ... < t_N = T.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, std::size_t n_steps);

  double horizon() const noexcept { return horizon_; }
  std::size_t n_steps() const noexcept { return n_steps_; }
  std::size_t n_nodes() const noexcept { return n_steps_ + 1; }
  double dt() const noexcept { return dt_; }
  double time(std::size_t k) const { return nodes_[k]; }
  const std::vector<double>& nodes() const noexcept { return nodes_; }

  /// Index of the node closest to t (clamped to [0, N]).
  std::size_t nearest_node(double t) const;

  bool operator==(const TimeGrid& other) const {
    return n_steps_ == other.n_steps_ && horizon_ == other.horizon_;
  }

 private:
  double horizon_ = 0.0;
  std::size_t n_steps_ = 0;
  double dt_ = 0.0;
  std::vector<double> nodes_;
};

/// Throws std::invalid_argument unless horizon > 0 and n_steps >= 1.
TimeGrid make_grid(double horizon, std::size_t n_steps);

enum class Measure { P, QTilde };

std::string to_string(Measure m);

/// Dense (path, node, dimension) array of sampled values on one grid.
class PathEnsemble {
 public:
  PathEnsemble() = default;
  PathEnsemble(TimeGrid grid, std::size_t dim, std::size_t n_paths, Measure measure = Measure::P);

  const TimeGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t n_paths() const noexcept { return n_paths_; }
  std::size_t n_nodes() const noexcept { return grid_.n_nodes(); }
  Measure measure() const noexcept { return measure_; }
  void set_measure(Measure m) noexcept { measure_ = m; }

  double& operator()(std::size_t path, std::size_t node, std::size_t d = 0) {
    return values_[(path * grid_.n_nodes() + node) * dim_ + d];
  }
  double operator()(std::size_t path, std::size_t node, std::size_t d = 0) const {
    return values_[(path * grid_.n_nodes() + node) * dim_ + d];
  }

  /// All nodes of one path, laid out node-major then dimension.
  std::span<double> path(std::size_t p) {
    return {values_.data() + p * path_stride(), path_stride()};
  }
  std::span<const double> path(std::size_t p) const {
    return {values_.data() + p * path_stride(), path_stride()};
  }
  std::size_t path_stride() const noexcept { return grid_.n_nodes() * dim_; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  bool all_finite() const;

 private:
  TimeGrid grid_;
  std::size_t dim_ = 0;
  std::size_t n_paths_ = 0;
  Measure measure_ = Measure::P;
  std::vector<double> values_;
};

/// Master seed plus the path -> substream derivation rule.
///
/// Path p draws from its own std::mt19937_64 seeded through std::seed_seq with
/// (master_seed, p). The stream for a path never depends on how many paths are
/// simulated alongside it, so ensembles can be built in chunks.
struct SeedSpec {
  std::uint64_t master_seed = 0;

  std::mt19937_64 stream(std::uint64_t path_index) const;
};

/// Brownian paths on `grid`; path p of the result uses substream first_path + p.
PathEnsemble sample_brownian(const TimeGrid& grid, std::size_t dim, std::size_t n_paths,
                             const SeedSpec& seeds, Measure measure = Measure::P,
                             std::size_t first_path = 0);

/// One Brownian path from substream path_index into out ((N+1)*dim values).
void brownian_path(const TimeGrid& grid, std::size_t dim, const SeedSpec& seeds,
                   std::uint64_t path_index, std::span<double> out);

/// Keeps every `factor`-th node. For a cumulative path this sums the fine increments.
PathEnsemble coarsen(const PathEnsemble& fine, std::size_t factor);

/// Where a path integration step happens; carried by NumericError.
struct StepLocation {
  std::size_t path = 0;
  std::size_t step = 0;
};

/// state <- state + drift*dt + diffusion*dW, in place.
///
/// `diffusion` is row-major with state.size() rows and dW.size() columns.
void euler_step_inplace(std::span<double> state, double dt, std::span<const double> drift,
                        std::span<const double> diffusion, std::span<const double> dW,
                        StepLocation where);

/// One Euler-Maruyama step where drift and diffusion are functionals of (t, history).
///
/// `drift(t)` must return state.size() values and `diffusion(t)` a row-major
/// state.size() x dW.size() matrix; both may look at any history the caller
/// captured up to time t.
template <class DriftFn, class DiffusionFn>
std::vector<double> euler_step_functional(std::span<const double> state, double t, double dt,
                                          DriftFn&& drift, DiffusionFn&& diffusion,
                                          std::span<const double> dW, StepLocation where) {
  std::vector<double> next(state.begin(), state.end());
  const std::vector<double> a = drift(t);
  const std::vector<double> b = diffusion(t);
  euler_step_inplace(next, dt, a, b, dW, where);
  return next;
}

}  // namespace portdec
