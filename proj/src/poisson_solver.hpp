#pragma once

#include <edit3d/grid.hpp>

#include <vector>

namespace edit3d::bginpaint::detail {

struct SolveOutcome {
  std::vector<double> history;
  int sweeps = 0;
  bool converged = false;
};

struct SolveSettings {
  double tolerance = 1e-9;
  int max_sweeps = 10000;
  bool multigrid = true;
  int pre_smooth = 2;
  int post_smooth = 2;
};

/// Solves n_p x_p - sum_q x_q = rhs_p on `unknown`, where q runs over the in-image
/// 4-neighbours of p (missing neighbours give a Neumann border). Non-unknown entries of `x`
/// act as Dirichlet data. Red-black Gauss-Seidel, optionally accelerated by V-cycles.
SolveOutcome solve_masked_poisson(Grid<double> &x, const Mask &unknown, const Grid<double> &rhs,
                                  const SolveSettings &settings);

/// Max-norm of rhs - A x over `unknown`.
double max_residual(const Grid<double> &x, const Mask &unknown, const Grid<double> &rhs);

} // namespace edit3d::bginpaint::detail
