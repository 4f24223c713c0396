#pragma once

#include <edit3d/correspondence.hpp>
#include <edit3d/geom.hpp>
#include <edit3d/grid.hpp>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <string_view>
#include <vector>

namespace edit3d::align {

struct SolverConfig {
  double lambda = 1.0;
  int max_iterations = 50;
  double initial_damping = 1e-3; // mu_0 relative to max diag(J^T J)
  double damping_up = 2.0;
  double damping_down = 1.0 / 3.0;
  double cost_tolerance = 1e-10;     // relative cost decrease that ends the solve
  double gradient_tolerance = 1e-9;  // max |J^T r| that ends the solve
  double confidence_floor = 0.05;
  /// Cauchy loss scale in pixels on each weighted pair residual; 0 keeps plain least squares.
  double robust_scale = 0.0;

  void validate() const;
};

enum class Termination { GradientSmall, CostConverged, MaxIterations, DampingExhausted };

[[nodiscard]] std::string_view to_string(Termination t);

struct SolverIteration {
  double cost = 0.0;         // total cost after the iteration (of the current estimate)
  double rmse = 0.0;         // confidence-free reprojection RMSE in pixels
  double regularizer = 0.0;  // lambda * sum |grad D - grad D0|^2
  double damping = 0.0;      // mu used for the trial step
  bool accepted = false;
};

struct SolverReport {
  double initial_cost = 0.0;
  double initial_rmse = 0.0;
  std::vector<SolverIteration> iterations;
  Termination termination = Termination::MaxIterations;
  std::size_t pairs_used = 0;
  std::size_t pairs_dropped = 0;  // below the confidence floor or off the unknown pixels
  std::size_t pairs_flagged = 0;  // transformed point behind the camera at the final estimate

  [[nodiscard]] double final_cost() const;
  [[nodiscard]] double final_rmse() const;
};

/// Chains I->Jhat pairs through Jhat->J matches at the nearest Jhat source (snap <= 1 px).
/// Confidences multiply; results under `confidence_floor` are dropped.
/// Throws InsufficientCorrespondences when nothing survives.
[[nodiscard]] CorrespondenceSet compose_correspondences(const CorrespondenceSet &warp_pairs,
                                                        const CorrespondenceSet &match_pairs,
                                                        double confidence_floor = 0.0);

/// Stacked least-squares problem over the depth of `mask` pixels:
///   sqrt(c) * (project(T(unproject(x_I, D))) - x_J)     per pair
///   sqrt(lambda) * (forward difference of D - D0)        per mask edge, x and y
class AlignmentProblem {
public:
  AlignmentProblem(const geom::DepthMap &reference, const Mask &mask, const geom::RigidTransform &transform,
                   const CorrespondenceSet &pairs, const SolverConfig &config);

  [[nodiscard]] std::size_t unknowns() const noexcept { return pixels_.size(); }
  [[nodiscard]] std::size_t pair_count() const noexcept { return pairs_.size(); }
  [[nodiscard]] std::size_t regularizer_count() const noexcept { return edges_.size(); }
  [[nodiscard]] std::size_t residual_count() const noexcept { return 2 * pairs_.size() + edges_.size(); }
  [[nodiscard]] std::size_t dropped_pairs() const noexcept { return dropped_; }

  [[nodiscard]] Eigen::VectorXd pack(const geom::DepthMap &depth) const;
  /// Reference depth with the unknown pixels replaced by `x`.
  [[nodiscard]] geom::DepthMap unpack(const Eigen::VectorXd &x) const;

  /// Pair residuals first (2 per pair, u then v), then regularizer residuals. Pairs whose point
  /// lands at z <= 0 contribute zeros and are listed in `flagged` when non-null.
  [[nodiscard]] Eigen::VectorXd residuals(const Eigen::VectorXd &x, std::vector<std::size_t> *flagged = nullptr) const;
  [[nodiscard]] Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd &x) const;

  /// Sum of squared residuals, with the Cauchy loss applied to pair blocks when enabled.
  [[nodiscard]] double cost(const Eigen::VectorXd &residuals) const;
  /// Per-residual row weights sqrt(rho') of the robust loss (all ones without it).
  [[nodiscard]] Eigen::VectorXd row_weights(const Eigen::VectorXd &residuals) const;

  [[nodiscard]] double reprojection_rmse(const Eigen::VectorXd &x) const;
  [[nodiscard]] double regularizer(const Eigen::VectorXd &x) const;

private:
  struct Pair {
    int unknown;
    geom::Vec3 ray;    // K^-1 (u, v, 1)
    geom::Vec2 target;
    double weight;     // sqrt(confidence)
  };
  struct Edge {
    int a;
    int b;
    double reference_difference; // D0_b - D0_a
  };

  geom::DepthMap reference_;
  geom::Mat3 linear_;
  geom::Vec3 offset_;
  double sqrt_lambda_;
  double robust_scale_;
  std::vector<int> pixels_; // flat image index per unknown
  std::vector<Pair> pairs_;
  std::vector<Edge> edges_;
  std::size_t dropped_ = 0;
};

struct Residuals {
  Eigen::VectorXd values;
  std::vector<std::size_t> flagged;
};

/// Residual vector of `depth` against the reference `d0` (see AlignmentProblem).
[[nodiscard]] Residuals reprojection_residuals(const geom::DepthMap &depth, const geom::DepthMap &d0,
                                               const geom::RigidTransform &transform, const CorrespondenceSet &pairs,
                                               const Mask &mask, const SolverConfig &config = {});

struct SolveResult {
  geom::DepthMap depth;
  SolverReport report;
};

/// Levenberg-Marquardt on the depth of `mask` pixels, regularised towards `d0`.
/// The estimate starts at `start` when given (same shape as d0), else at d0.
/// Throws InsufficientCorrespondences (< 3 usable pairs) or Diverged (non-finite cost).
[[nodiscard]] SolveResult solve_depth(const geom::DepthMap &d0, const geom::RigidTransform &transform,
                                      const CorrespondenceSet &pairs, const Mask &mask,
                                      const SolverConfig &config = {}, const geom::DepthMap *start = nullptr);

} // namespace edit3d::align
