#pragma once

#include <edit3d/geom.hpp>
#include <edit3d/grid.hpp>

#include <vector>

namespace edit3d::bginpaint {

/// Disparity gradient (1/m per pixel); entries outside `valid_mask` are undefined.
struct GradientField {
  Grid<double> gx;
  Grid<double> gy;
  Mask valid_mask;
};

/// Central differences outside the hole, one-sided at the image border.
/// valid_mask is the complement of the hole eroded by one pixel.
[[nodiscard]] GradientField disparity_gradient(const geom::DisparityMap &disparity, const Mask &hole);

enum class FillMethod {
  /// Ordered fill from the hole boundary inwards where each pixel averages already known
  /// neighbours, weighted towards the local edge direction of the gradient map.
  CoherenceTransport,
  /// Channel-wise Laplace interpolation with the known pixels as Dirichlet data.
  Harmonic,
};

struct FillOptions {
  FillMethod method = FillMethod::CoherenceTransport;
  double radius = 5.0;            // neighbourhood radius (coherence transport)
  double sharpness = 25.0;        // directional concentration (coherence transport)
  double tensor_radius = 4.0;     // structure-tensor window (coherence transport)
  int max_iterations = 10000;     // sweep cap (harmonic)
  double tolerance = 1e-6;        // residual target (harmonic)
};

struct FillResult {
  GradientField field;
  bool converged = true;
  int iterations = 0;
  double residual = 0.0;
};

/// Fills every pixel in `hole` or outside `g.valid_mask`; the known region is copied bit-exactly.
/// Hitting the iteration cap sets converged = false instead of failing.
[[nodiscard]] FillResult fill_gradient(const GradientField &g, const Mask &hole, const FillOptions &options = {});

struct PoissonOptions {
  double tolerance = 1e-9;
  int max_sweeps = 10000;
  bool multigrid = true;
  int pre_smooth = 2;
  int post_smooth = 2;
};

struct PoissonReport {
  /// Max-norm residual after each outer iteration (V-cycle or sweep), starting with the initial guess.
  std::vector<double> residual_history;
  int sweeps = 0;
  bool converged = false;
  [[nodiscard]] double final_residual() const { return residual_history.empty() ? 0.0 : residual_history.back(); }
};

/// Solves lap(d) = div(g) on `hole` with d fixed to `anchor` on the surrounding ring.
/// Throws SolverFailure (message carries the residual) when the sweep cap is hit.
[[nodiscard]] geom::DisparityMap poisson_reconstruct(const GradientField &g, const geom::DisparityMap &anchor,
                                                     const Mask &hole, const PoissonOptions &options = {},
                                                     PoissonReport *report = nullptr);

/// Max-norm of lap(d) - div(g) over the hole.
[[nodiscard]] double poisson_residual(const GradientField &g, const geom::DisparityMap &d, const Mask &hole);

struct BackgroundOptions {
  FillOptions fill;
  PoissonOptions poisson;
  double max_disparity = geom::kDefaultMaxDisparity;
};

/// Depth of the background behind `object_mask`: disparity, its gradient, edge-aware fill of
/// the gradient and Poisson reconstruction. Pixels outside the mask keep their input value.
[[nodiscard]] geom::DepthMap inpaint_background_depth(const geom::DepthMap &depth, const Mask &object_mask,
                                                      const BackgroundOptions &options = {});

} // namespace edit3d::bginpaint
