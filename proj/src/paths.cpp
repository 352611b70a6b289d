#include "portdec/paths.hpp"

#include <algorithm>
#include <stdexcept>

namespace portdec {

TimeGrid::TimeGrid(double horizon, std::size_t n_steps)
    : horizon_(horizon), n_steps_(n_steps), dt_(horizon / static_cast<double>(n_steps)) {
  nodes_.resize(n_steps + 1);
  for (std::size_t k = 0; k < n_steps; ++k) nodes_[k] = static_cast<double>(k) * dt_;
  nodes_[n_steps] = horizon;
}

std::size_t TimeGrid::nearest_node(double t) const {
  if (t <= 0.0) return 0;
  if (t >= horizon_) return n_steps_;
  return std::min(n_steps_, static_cast<std::size_t>(std::llround(t / dt_)));
}

TimeGrid make_grid(double horizon, std::size_t n_steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw std::invalid_argument("make_grid: horizon must be positive and finite");
  }
  if (n_steps < 1) throw std::invalid_argument("make_grid: n_steps must be at least 1");
  return TimeGrid(horizon, n_steps);
}

std::string to_string(Measure m) { return m == Measure::P ? "P" : "Q-tilde"; }

PathEnsemble::PathEnsemble(TimeGrid grid, std::size_t dim, std::size_t n_paths, Measure measure)
    : grid_(std::move(grid)), dim_(dim), n_paths_(n_paths), measure_(measure) {
  if (dim == 0 || n_paths == 0) {
    throw std::invalid_argument("PathEnsemble: dim and n_paths must be positive");
  }
  values_.assign(n_paths * grid_.n_nodes() * dim, 0.0);
}

bool PathEnsemble::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::mt19937_64 SeedSpec::stream(std::uint64_t path_index) const {
  std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                    static_cast<std::uint32_t>(master_seed >> 32),
                    static_cast<std::uint32_t>(path_index),
                    static_cast<std::uint32_t>(path_index >> 32), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

void brownian_path(const TimeGrid& grid, std::size_t dim, const SeedSpec& seeds,
                   std::uint64_t path_index, std::span<double> w) {
  if (w.size() != grid.n_nodes() * dim) throw std::invalid_argument("brownian_path: bad buffer size");
  std::mt19937_64 rng = seeds.stream(path_index);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(grid.dt());
  for (std::size_t d = 0; d < dim; ++d) w[d] = 0.0;
  for (std::size_t k = 0; k < grid.n_steps(); ++k) {
    for (std::size_t d = 0; d < dim; ++d) w[(k + 1) * dim + d] = w[k * dim + d] + sd * normal(rng);
  }
}

PathEnsemble sample_brownian(const TimeGrid& grid, std::size_t dim, std::size_t n_paths,
                             const SeedSpec& seeds, Measure measure, std::size_t first_path) {
  PathEnsemble out(grid, dim, n_paths, measure);
#pragma omp parallel for schedule(static)
  for (std::size_t p = 0; p < n_paths; ++p) brownian_path(grid, dim, seeds, first_path + p, out.path(p));
  return out;
}

PathEnsemble coarsen(const PathEnsemble& fine, std::size_t factor) {
  if (factor == 0 || fine.grid().n_steps() % factor != 0) {
    throw std::invalid_argument("coarsen: factor must divide the number of steps");
  }
  const TimeGrid coarse_grid(fine.grid().horizon(), fine.grid().n_steps() / factor);
  PathEnsemble out(coarse_grid, fine.dim(), fine.n_paths(), fine.measure());
  const std::size_t dim = fine.dim();
  for (std::size_t p = 0; p < fine.n_paths(); ++p) {
    std::span<const double> src = fine.path(p);
    std::span<double> dst = out.path(p);
    for (std::size_t k = 0; k < coarse_grid.n_nodes(); ++k) {
      for (std::size_t d = 0; d < dim; ++d) dst[k * dim + d] = src[k * factor * dim + d];
    }
  }
  return out;
}

void euler_step_inplace(std::span<double> state, double dt, std::span<const double> drift,
                        std::span<const double> diffusion, std::span<const double> dW,
                        StepLocation where) {
  const std::size_t n = state.size();
  const std::size_t m = dW.size();
  if (drift.size() != n || diffusion.size() != n * m) {
    throw std::invalid_argument("euler_step: drift/diffusion shape mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double next = state[i] + drift[i] * dt;
    for (std::size_t j = 0; j < m; ++j) next += diffusion[i * m + j] * dW[j];
    if (!std::isfinite(next)) throw NumericError("euler_step: non-finite state", where.path, where.step);
    state[i] = next;
  }
}

}  // namespace portdec
