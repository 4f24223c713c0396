#include <edit3d/align.hpp>

#include <Eigen/SparseCholesky>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace edit3d::align {

using geom::Vec2;
using geom::Vec3;

void SolverConfig::validate() const {
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::InvalidConfig, "solver: lambda must be >= 0");
  require(max_iterations >= 0, ErrorKind::InvalidConfig, "solver: max_iterations must be >= 0");
  require(initial_damping > 0.0 && damping_up > 1.0 && damping_down > 0.0 && damping_down < 1.0,
          ErrorKind::InvalidConfig, "solver: invalid damping schedule");
  require(cost_tolerance > 0.0 && gradient_tolerance > 0.0, ErrorKind::InvalidConfig,
          "solver: tolerances must be > 0");
  require(robust_scale >= 0.0, ErrorKind::InvalidConfig, "solver: robust scale must be >= 0");
  require(confidence_floor >= 0.0 && confidence_floor <= 1.0, ErrorKind::InvalidConfig,
          "solver: confidence floor outside [0, 1]");
}

std::string_view to_string(Termination t) {
  switch (t) {
  case Termination::GradientSmall:
    return "gradient-small";
  case Termination::CostConverged:
    return "cost-converged";
  case Termination::MaxIterations:
    return "max-iterations";
  case Termination::DampingExhausted:
    return "damping-exhausted";
  }
  return "unknown";
}

double SolverReport::final_cost() const {
  for (auto it = iterations.rbegin(); it != iterations.rend(); ++it) {
    if (it->accepted) {
      return it->cost;
    }
  }
  return initial_cost;
}

double SolverReport::final_rmse() const {
  for (auto it = iterations.rbegin(); it != iterations.rend(); ++it) {
    if (it->accepted) {
      return it->rmse;
    }
  }
  return initial_rmse;
}

CorrespondenceSet compose_correspondences(const CorrespondenceSet &warp_pairs, const CorrespondenceSet &match_pairs,
                                          double confidence_floor) {
  // Index the matches by the integer Jhat pixel nearest to their source.
  std::unordered_map<long long, std::size_t> by_pixel;
  const auto key = [](long long u, long long v) { return (v << 32) ^ (u & 0xffffffffLL); };
  for (std::size_t m = 0; m < match_pairs.pairs.size(); ++m) {
    const Vec2 &s = match_pairs.pairs[m].source;
    if (!s.allFinite()) {
      continue;
    }
    const auto u = std::llround(s.x());
    const auto v = std::llround(s.y());
    auto [it, inserted] = by_pixel.try_emplace(key(u, v), m);
    const Vec2 centre(static_cast<double>(u), static_cast<double>(v));
    if (!inserted && (s - centre).norm() < (match_pairs.pairs[it->second].source - centre).norm()) {
      it->second = m;
    }
  }

  CorrespondenceSet out;
  for (const auto &w : warp_pairs.pairs) {
    const Vec2 &y = w.target;
    const auto u0 = std::llround(y.x());
    const auto v0 = std::llround(y.y());
    const Correspondence *best = nullptr;
    double best_distance = 1.0 + 1e-12;
    for (long long dv = -1; dv <= 1; ++dv) {
      for (long long du = -1; du <= 1; ++du) {
        const auto it = by_pixel.find(key(u0 + du, v0 + dv));
        if (it == by_pixel.end()) {
          continue;
        }
        const auto &m = match_pairs.pairs[it->second];
        const double d = (m.source - y).norm();
        if (d < best_distance) {
          best_distance = d;
          best = &m;
        }
      }
    }
    if (best == nullptr) {
      continue;
    }
    const double confidence = w.confidence * best->confidence;
    if (confidence < confidence_floor || confidence <= 0.0) {
      continue;
    }
    out.pairs.push_back({w.source, best->target + (y - best->source), confidence});
  }
  require(!out.empty(), ErrorKind::InsufficientCorrespondences, "compose_correspondences: no pairs survived");
  return out;
}

AlignmentProblem::AlignmentProblem(const geom::DepthMap &reference, const Mask &mask,
                                   const geom::RigidTransform &transform, const CorrespondenceSet &pairs,
                                   const SolverConfig &config)
    : reference_(reference), linear_(transform.linear()), offset_(transform.offset()),
      sqrt_lambda_(std::sqrt(config.lambda)), robust_scale_(config.robust_scale) {
  config.validate();
  const int w = reference.width();
  const int h = reference.height();
  require(mask.width() == w && mask.height() == h, ErrorKind::InvalidInput, "align: mask and depth sizes differ");
  Grid<int> unknown_of(w, h, -1);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (mask(u, v) != 0 && reference.valid(u, v)) {
        unknown_of(u, v) = static_cast<int>(pixels_.size());
        pixels_.push_back(static_cast<int>(mask.index(u, v)));
      }
    }
  }
  const auto &k = reference.intrinsics;
  for (const auto &c : pairs.pairs) {
    const auto u = static_cast<int>(std::lround(c.source.x()));
    const auto v = static_cast<int>(std::lround(c.source.y()));
    if (!c.source.allFinite() || !c.target.allFinite() || !unknown_of.contains(u, v) || unknown_of(u, v) < 0 ||
        c.confidence < config.confidence_floor || c.confidence <= 0.0) {
      ++dropped_;
      continue;
    }
    const Vec3 ray((c.source.x() - k.cx) / k.fx, (c.source.y() - k.cy) / k.fy, 1.0);
    pairs_.push_back({unknown_of(u, v), ray, c.target, std::sqrt(c.confidence)});
  }
  if (sqrt_lambda_ > 0.0) {
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const int a = unknown_of(u, v);
        if (a < 0) {
          continue;
        }
        if (u + 1 < w && unknown_of(u + 1, v) >= 0) {
          edges_.push_back({a, unknown_of(u + 1, v), reference(u + 1, v) - reference(u, v)});
        }
        if (v + 1 < h && unknown_of(u, v + 1) >= 0) {
          edges_.push_back({a, unknown_of(u, v + 1), reference(u, v + 1) - reference(u, v)});
        }
      }
    }
  }
}

Eigen::VectorXd AlignmentProblem::pack(const geom::DepthMap &depth) const {
  require(depth.values.same_shape(reference_.values), ErrorKind::InvalidInput, "align: depth shape mismatch");
  Eigen::VectorXd x(static_cast<Eigen::Index>(pixels_.size()));
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    x[static_cast<Eigen::Index>(i)] = depth.values[static_cast<std::size_t>(pixels_[i])];
  }
  return x;
}

geom::DepthMap AlignmentProblem::unpack(const Eigen::VectorXd &x) const {
  geom::DepthMap out = reference_;
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    out.values[static_cast<std::size_t>(pixels_[i])] = x[static_cast<Eigen::Index>(i)];
  }
  return out;
}

Eigen::VectorXd AlignmentProblem::residuals(const Eigen::VectorXd &x, std::vector<std::size_t> *flagged) const {
  const auto &k = reference_.intrinsics;
  Eigen::VectorXd r(static_cast<Eigen::Index>(residual_count()));
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    const Pair &pr = pairs_[p];
    const Vec3 q = linear_ * (pr.ray * x[pr.unknown]) + offset_;
    const auto row = static_cast<Eigen::Index>(2 * p);
    if (q.z() <= 0.0) {
      r[row] = 0.0;
      r[row + 1] = 0.0;
      if (flagged != nullptr) {
        flagged->push_back(p);
      }
      continue;
    }
    r[row] = pr.weight * (k.fx * q.x() / q.z() + k.cx - pr.target.x());
    r[row + 1] = pr.weight * (k.fy * q.y() / q.z() + k.cy - pr.target.y());
  }
  const auto base = static_cast<Eigen::Index>(2 * pairs_.size());
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const Edge &ed = edges_[e];
    r[base + static_cast<Eigen::Index>(e)] = sqrt_lambda_ * ((x[ed.b] - x[ed.a]) - ed.reference_difference);
  }
  return r;
}

Eigen::SparseMatrix<double> AlignmentProblem::jacobian(const Eigen::VectorXd &x) const {
  const auto &k = reference_.intrinsics;
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(2 * pairs_.size() + 2 * edges_.size());
  for (std::size_t p = 0; p < pairs_.size(); ++p) {
    const Pair &pr = pairs_[p];
    const Vec3 a = linear_ * pr.ray; // dq/dD
    const Vec3 q = a * x[pr.unknown] + offset_;
    if (q.z() <= 0.0) {
      continue;
    }
    const double iz2 = 1.0 / (q.z() * q.z());
    const auto row = static_cast<int>(2 * p);
    t.emplace_back(row, pr.unknown, pr.weight * k.fx * (a.x() * q.z() - q.x() * a.z()) * iz2);
    t.emplace_back(row + 1, pr.unknown, pr.weight * k.fy * (a.y() * q.z() - q.y() * a.z()) * iz2);
  }
  const auto base = static_cast<int>(2 * pairs_.size());
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    t.emplace_back(base + static_cast<int>(e), edges_[e].a, -sqrt_lambda_);
    t.emplace_back(base + static_cast<int>(e), edges_[e].b, sqrt_lambda_);
  }
  Eigen::SparseMatrix<double> j(static_cast<Eigen::Index>(residual_count()), static_cast<Eigen::Index>(unknowns()));
  j.setFromTriplets(t.begin(), t.end());
  return j;
}

double AlignmentProblem::cost(const Eigen::VectorXd &r) const {
  const auto pair_rows = static_cast<Eigen::Index>(2 * pairs_.size());
  const double reg = r.tail(r.size() - pair_rows).squaredNorm();
  if (robust_scale_ <= 0.0) {
    return r.head(pair_rows).squaredNorm() + reg;
  }
  const double c2 = robust_scale_ * robust_scale_;
  double sum = 0.0;
  for (Eigen::Index p = 0; p < pair_rows; p += 2) {
    sum += c2 * std::log1p((r[p] * r[p] + r[p + 1] * r[p + 1]) / c2);
  }
  return sum + reg;
}

Eigen::VectorXd AlignmentProblem::row_weights(const Eigen::VectorXd &r) const {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(r.size());
  if (robust_scale_ <= 0.0) {
    return w;
  }
  const double c2 = robust_scale_ * robust_scale_;
  for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(2 * pairs_.size()); p += 2) {
    // Gradient-consistent reweighting that drops the second-order term of the loss.
    const double s = r[p] * r[p] + r[p + 1] * r[p + 1];
    w[p] = w[p + 1] = 1.0 / std::sqrt(1.0 + s / c2);
  }
  return w;
}

double AlignmentProblem::reprojection_rmse(const Eigen::VectorXd &x) const {
  const auto &k = reference_.intrinsics;
  double sum = 0.0;
  std::size_t n = 0;
  for (const Pair &pr : pairs_) {
    const Vec3 q = linear_ * (pr.ray * x[pr.unknown]) + offset_;
    if (q.z() <= 0.0) {
      continue;
    }
    const Vec2 pix(k.fx * q.x() / q.z() + k.cx, k.fy * q.y() / q.z() + k.cy);
    sum += (pix - pr.target).squaredNorm();
    ++n;
  }
  return n == 0 ? 0.0 : std::sqrt(sum / static_cast<double>(n));
}

double AlignmentProblem::regularizer(const Eigen::VectorXd &x) const {
  double sum = 0.0;
  for (const Edge &ed : edges_) {
    const double d = (x[ed.b] - x[ed.a]) - ed.reference_difference;
    sum += d * d;
  }
  return sqrt_lambda_ * sqrt_lambda_ * sum;
}

Residuals reprojection_residuals(const geom::DepthMap &depth, const geom::DepthMap &d0,
                                 const geom::RigidTransform &transform, const CorrespondenceSet &pairs,
                                 const Mask &mask, const SolverConfig &config) {
  const AlignmentProblem problem(d0, mask, transform, pairs, config);
  Residuals out;
  out.values = problem.residuals(problem.pack(depth), &out.flagged);
  return out;
}

SolveResult solve_depth(const geom::DepthMap &d0, const geom::RigidTransform &transform,
                        const CorrespondenceSet &pairs, const Mask &mask, const SolverConfig &config,
                        const geom::DepthMap *start) {
  const AlignmentProblem problem(d0, mask, transform, pairs, config);
  SolverReport report;
  report.pairs_used = problem.pair_count();
  report.pairs_dropped = problem.dropped_pairs();
  require(problem.pair_count() >= 3, ErrorKind::InsufficientCorrespondences,
          fmt::format("solve_depth: {} usable correspondences, need at least 3", problem.pair_count()));

  Eigen::VectorXd x = problem.pack(start != nullptr ? *start : d0);
  require(x.allFinite() && (x.array() > 0.0).all(), ErrorKind::InvalidInput,
          "solve_depth: starting depth must be positive on the mask");
  std::vector<std::size_t> flagged;
  Eigen::VectorXd r = problem.residuals(x, &flagged);
  double cost = problem.cost(r);
  report.initial_cost = cost;
  report.initial_rmse = problem.reprojection_rmse(x);
  if (!std::isfinite(cost)) {
    fail(ErrorKind::Diverged, "solve_depth: initial cost is not finite");
  }

  const auto n = static_cast<Eigen::Index>(problem.unknowns());
  Eigen::SparseMatrix<double> identity(n, n);
  identity.setIdentity();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool analysed = false;
  double mu = -1.0;
  bool fresh = true; // the Jacobian must be rebuilt
  Eigen::SparseMatrix<double> jtj;
  Eigen::VectorXd g;

  report.termination = Termination::MaxIterations;
  while (static_cast<int>(report.iterations.size()) < config.max_iterations) {
    if (fresh) {
      const Eigen::VectorXd weights = problem.row_weights(r);
      const Eigen::SparseMatrix<double> j = weights.asDiagonal() * problem.jacobian(x);
      g = j.transpose() * weights.cwiseProduct(r);
      if (g.size() == 0 || g.cwiseAbs().maxCoeff() <= config.gradient_tolerance) {
        report.termination = Termination::GradientSmall;
        break;
      }
      jtj = (j.transpose() * j).pruned();
      if (mu < 0.0) {
        mu = config.initial_damping * std::max(jtj.diagonal().maxCoeff(), 1e-12);
      }
      fresh = false;
    }
    const Eigen::SparseMatrix<double> a = jtj + mu * identity;
    if (!analysed) {
      ldlt.analyzePattern(a);
      analysed = true;
    }
    ldlt.factorize(a);
    SolverIteration it;
    it.damping = mu;
    Eigen::VectorXd trial = x;
    bool usable = ldlt.info() == Eigen::Success;
    if (usable) {
      trial = x - ldlt.solve(g);
      usable = trial.allFinite() && (trial.array() > 0.0).all();
    }
    std::vector<std::size_t> trial_flagged;
    Eigen::VectorXd trial_r;
    double trial_cost = std::numeric_limits<double>::infinity();
    if (usable) {
      trial_r = problem.residuals(trial, &trial_flagged);
      trial_cost = problem.cost(trial_r);
      usable = trial_flagged.size() <= flagged.size();
    }
    if (usable && !std::isfinite(trial_cost)) {
      fail(ErrorKind::Diverged, fmt::format("solve_depth: non-finite cost at iteration {}", report.iterations.size()));
    }
    if (usable && trial_cost < cost) {
      const double decrease = (cost - trial_cost) / std::max(cost, 1e-300);
      x = std::move(trial);
      r = std::move(trial_r);
      flagged = std::move(trial_flagged);
      cost = trial_cost;
      mu *= config.damping_down;
      fresh = true;
      it.accepted = true;
      it.cost = cost;
      it.rmse = problem.reprojection_rmse(x);
      it.regularizer = problem.regularizer(x);
      report.iterations.push_back(it);
      if (decrease < config.cost_tolerance) {
        report.termination = Termination::CostConverged;
        break;
      }
    } else {
      it.cost = cost;
      it.rmse = problem.reprojection_rmse(x);
      it.regularizer = problem.regularizer(x);
      report.iterations.push_back(it);
      mu *= config.damping_up;
      if (mu > 1e30) {
        report.termination = Termination::DampingExhausted;
        break;
      }
    }
  }
  report.pairs_flagged = flagged.size();
  return {problem.unpack(x), report};
}

} // namespace edit3d::align
