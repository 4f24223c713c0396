#include <doctest.h>

#include <edit3d/align.hpp>

#include "support/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

using namespace edit3d;
using namespace edit3d::align;
using namespace edit3d::geom;

namespace {

double deg(double d) { return d * std::numbers::pi / 180.0; }

// Exact pairs for every mask pixel: source pixel -> projection of its point under `t`.
CorrespondenceSet exact_pairs(const DepthMap &truth, const Mask &mask, const RigidTransform &t) {
  CorrespondenceSet set;
  for (int v = 0; v < mask.height(); ++v) {
    for (int u = 0; u < mask.width(); ++u) {
      if (mask(u, v) != 0) {
        const Vec2 src(u, v);
        set.pairs.push_back({src, project(t.apply(unproject(src, truth(u, v), truth.intrinsics)), truth.intrinsics), 1.0});
      }
    }
  }
  return set;
}

DepthMap add_noise(const DepthMap &d, const Mask &mask, double amplitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(-amplitude, amplitude);
  DepthMap out = d;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0) {
      out.values[i] += noise(rng);
    }
  }
  return out;
}

double rmse_on(const DepthMap &a, const DepthMap &b, const Mask &where) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < where.size(); ++i) {
    if (where[i] != 0) {
      sum += (a.values[i] - b.values[i]) * (a.values[i] - b.values[i]);
      ++n;
    }
  }
  return std::sqrt(sum / static_cast<double>(n));
}

void check_accepted_costs(const SolverReport &report) {
  double previous = report.initial_cost;
  for (const auto &it : report.iterations) {
    CHECK(it.cost <= previous);
    if (it.accepted) {
      previous = it.cost;
    }
  }
}

struct PlaneScene {
  CameraIntrinsics k = testing::square_camera(96, 96.0);
  DepthMap truth = testing::constant_depth(k, 2.0);
  Mask mask = testing::rect_mask(96, 96, 28, 30, 67, 65);
  RigidTransform t = RigidTransform::about_axis(Vec3::UnitY(), deg(15.0), Vec3(0.0, 0.0, 2.0));
};

} // namespace

TEST_CASE("compose_correspondences: identity matches, product rule and floor") {
  CorrespondenceSet warp_pairs;
  warp_pairs.pairs.push_back({{1.0, 2.0}, {5.2, 6.9}, 0.8});
  warp_pairs.pairs.push_back({{3.0, 4.0}, {8.0, 1.0}, 0.3});
  CorrespondenceSet identity;
  for (int v = 0; v < 10; ++v) {
    for (int u = 0; u < 10; ++u) {
      identity.pairs.push_back({{double(u), double(v)}, {double(u), double(v)}, 1.0});
    }
  }
  const auto same = compose_correspondences(warp_pairs, identity);
  REQUIRE(same.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK((same.pairs[i].source - warp_pairs.pairs[i].source).norm() == 0.0);
    CHECK((same.pairs[i].target - warp_pairs.pairs[i].target).norm() < 1e-12);
    CHECK(same.pairs[i].confidence == warp_pairs.pairs[i].confidence);
  }

  for (auto &m : identity.pairs) {
    m.confidence = 0.5;
  }
  const auto halved = compose_correspondences(warp_pairs, identity, 0.2);
  REQUIRE(halved.size() == 1);
  CHECK(halved.pairs[0].confidence == doctest::Approx(0.4));

  CHECK_THROWS_AS((void)compose_correspondences(warp_pairs, identity, 0.9), Error);
  CorrespondenceSet far;
  far.pairs.push_back({{50.0, 50.0}, {50.0, 50.0}, 1.0});
  try {
    (void)compose_correspondences(warp_pairs, far);
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::InsufficientCorrespondences);
  }
}

TEST_CASE("compose_correspondences: chaining through a known flow") {
  const auto flow = [](const Vec2 &p) {
    return Vec2(3.0 + 2.0 * std::sin(p.y() / 9.0), -1.5 + 1.5 * std::cos(p.x() / 11.0));
  };
  CorrespondenceSet matches;
  for (int v = 0; v < 64; ++v) {
    for (int u = 0; u < 64; ++u) {
      const Vec2 p(u, v);
      matches.pairs.push_back({p, p + flow(p), 1.0});
    }
  }
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> coord(2.0, 60.0);
  CorrespondenceSet warp_pairs;
  for (int i = 0; i < 500; ++i) {
    warp_pairs.pairs.push_back({{coord(rng), coord(rng)}, {coord(rng), coord(rng)}, 1.0});
  }
  const auto composed = compose_correspondences(warp_pairs, matches);
  REQUIRE(composed.size() == warp_pairs.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < composed.size(); ++i) {
    const Vec2 &y = warp_pairs.pairs[i].target;
    worst = std::max(worst, (composed.pairs[i].target - (y + flow(y))).norm());
  }
  CHECK(worst < 1.0);
}

TEST_CASE("reprojection_residuals: consistency, hand calculation and regularizer") {
  PlaneScene s;
  const auto exact = exact_pairs(s.truth, s.mask, s.t);
  const auto res = reprojection_residuals(s.truth, s.truth, s.t, exact, s.mask);
  CHECK(res.flagged.empty());
  CHECK(res.values.cwiseAbs().maxCoeff() < 1e-6);

  // Pixel (70, 60) at 2 m seen after a 0.1 m sideways shift lands at u = 76.4;
  // at 2.5 m it lands at u = 75.12. Confidence 0.25 halves the residual.
  const CameraIntrinsics k{128.0, 128.0, 64.0, 64.0, 128, 128};
  const DepthMap d0(k, 2.0);
  DepthMap perturbed = d0;
  perturbed(70, 60) = 2.5;
  const RigidTransform shift(Quat::Identity(), Vec3(0.1, 0.0, 0.0), Vec3::Zero(), 1.0);
  CorrespondenceSet one;
  one.pairs.push_back({{70.0, 60.0}, {76.4, 60.0}, 0.25});
  SolverConfig no_reg;
  no_reg.lambda = 0.0;
  const auto single = reprojection_residuals(perturbed, d0, shift, one, testing::rect_mask(128, 128, 70, 60, 70, 60), no_reg);
  REQUIRE(single.values.size() == 2);
  CHECK(single.values[0] == doctest::Approx(-0.64).epsilon(1e-12));
  CHECK(single.values[1] == doctest::Approx(0.0));

  // D = D0 leaves every regularizer residual at zero even with noisy depth.
  const auto noisy = add_noise(s.truth, s.mask, 0.1, 4);
  const auto reg = reprojection_residuals(noisy, noisy, s.t, exact, s.mask);
  const auto pairs = static_cast<Eigen::Index>(2 * exact.size());
  CHECK(reg.values.size() > pairs);
  CHECK(reg.values.tail(reg.values.size() - pairs).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("reprojection_residuals: points behind the camera are flagged") {
  const CameraIntrinsics k{64.0, 64.0, 32.0, 32.0, 64, 64};
  const DepthMap d(k, 1.0);
  const RigidTransform back(Quat::Identity(), Vec3(0.0, 0.0, -3.0), Vec3::Zero(), 1.0);
  CorrespondenceSet set;
  set.pairs.push_back({{10.0, 10.0}, {12.0, 12.0}, 1.0});
  const auto r = reprojection_residuals(d, d, back, set, testing::rect_mask(64, 64, 10, 10, 10, 10));
  REQUIRE(r.flagged.size() == 1);
  CHECK(r.values.head(2).isZero());
}

TEST_CASE("analytic Jacobian matches central differences on random instances") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (int instance = 0; instance < 100; ++instance) {
    const int w = 10 + static_cast<int>(unit(rng) * 6);
    const int h = 8 + static_cast<int>(unit(rng) * 6);
    const CameraIntrinsics k{20.0, 20.0, 0.5 * w, 0.5 * h, w, h};
    DepthMap d0(k, 1.0);
    for (auto &z : d0.values.data()) {
      z = 1.5 + unit(rng);
    }
    Mask mask(w, h);
    for (auto &m : mask.data()) {
      m = unit(rng) < 0.8 ? 1 : 0;
    }
    const Vec3 axis(normal(rng), normal(rng), normal(rng));
    const RigidTransform t(Quat(Eigen::AngleAxisd(deg(30.0) * unit(rng), axis.normalized())),
                           Vec3(0.2 * normal(rng), 0.2 * normal(rng), 0.2 * normal(rng)), Vec3(0.0, 0.0, 2.0),
                           0.8 + 0.4 * unit(rng));
    CorrespondenceSet pairs;
    for (int p = 0; p < 30; ++p) {
      pairs.pairs.push_back({{std::floor(unit(rng) * w), std::floor(unit(rng) * h)},
                             {unit(rng) * (w - 1), unit(rng) * (h - 1)},
                             0.1 + 0.9 * unit(rng)});
    }
    SolverConfig cfg;
    cfg.lambda = 3.0 * unit(rng);
    const AlignmentProblem problem(d0, mask, t, pairs, cfg);
    DepthMap d = d0;
    for (auto &z : d.values.data()) {
      z += 0.2 * (unit(rng) - 0.5);
    }
    const Eigen::VectorXd x = problem.pack(d);
    const Eigen::MatrixXd analytic(problem.jacobian(x));
    for (Eigen::Index c = 0; c < x.size(); ++c) {
      const double step = 1e-6 * x[c];
      Eigen::VectorXd xp = x;
      Eigen::VectorXd xm = x;
      xp[c] += step;
      xm[c] -= step;
      const Eigen::VectorXd fd = (problem.residuals(xp) - problem.residuals(xm)) / (2.0 * step);
      for (Eigen::Index r = 0; r < fd.size(); ++r) {
        const double scale = std::max(std::abs(analytic(r, c)), 1e-2);
        worst = std::max(worst, std::abs(analytic(r, c) - fd[r]) / scale);
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("solve_depth: already optimal input stops at iteration 0") {
  PlaneScene s;
  const auto noisy = add_noise(s.truth, s.mask, 0.1, 2);
  const auto result = solve_depth(noisy, s.t, exact_pairs(noisy, s.mask, s.t), s.mask);
  CHECK(result.report.iterations.empty());
  CHECK(result.report.termination == Termination::GradientSmall);
  CHECK(result.depth.values == noisy.values);
}

TEST_CASE("solve_depth: perturbed plane recovery") {
  PlaneScene s;
  const auto noisy = add_noise(s.truth, s.mask, 0.1, 3);
  const auto pairs = exact_pairs(s.truth, s.mask, s.t);
  const auto result = solve_depth(noisy, s.t, pairs, s.mask);
  CHECK(rmse_on(noisy, s.truth, s.mask) > 0.05);
  CHECK(rmse_on(result.depth, s.truth, s.mask) < 0.01);
  CHECK(result.report.final_cost() <= result.report.initial_cost);
  CHECK(result.report.final_rmse() < result.report.initial_rmse);
  check_accepted_costs(result.report);
  for (std::size_t i = 0; i < s.mask.size(); ++i) {
    if (s.mask[i] == 0) {
      CHECK(result.depth.values[i] == noisy.values[i]);
    }
  }
}

TEST_CASE("solve_depth: low-confidence outliers") {
  PlaneScene s;
  const auto noisy = add_noise(s.truth, s.mask, 0.1, 5);
  const auto clean_pairs = exact_pairs(s.truth, s.mask, s.t);
  SolverConfig cfg;
  cfg.robust_scale = 1.0;
  const auto clean = solve_depth(noisy, s.t, clean_pairs, s.mask, cfg);

  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto corrupted = clean_pairs;
  Mask inliers(s.mask.width(), s.mask.height());
  for (auto &c : corrupted.pairs) {
    if (unit(rng) < 0.3) {
      const double angle = 2.0 * std::numbers::pi * unit(rng);
      c.target += 20.0 * Vec2(std::cos(angle), std::sin(angle));
      c.confidence = 0.1;
    } else {
      inliers(static_cast<int>(c.source.x()), static_cast<int>(c.source.y())) = 1;
    }
  }
  const auto robust = solve_depth(noisy, s.t, corrupted, s.mask, cfg);
  check_accepted_costs(robust.report);
  const double clean_rmse = rmse_on(clean.depth, s.truth, inliers);
  const double corrupted_rmse = rmse_on(robust.depth, s.truth, inliers);
  CHECK(corrupted_rmse <= 2.0 * clean_rmse);
}

TEST_CASE("solve_depth: large lambda keeps the reference gradients") {
  PlaneScene s;
  const auto noisy = add_noise(s.truth, s.mask, 0.1, 6);
  // Correspondences of a tilted plane pull towards a different shape.
  const auto tilted = testing::plane_depth(s.k, Vec3(0.3, 0.0, 1.0).normalized(), 1.9);
  SolverConfig cfg;
  cfg.lambda = 1e6;
  const auto result = solve_depth(noisy, s.t, exact_pairs(tilted, s.mask, s.t), s.mask, cfg);
  check_accepted_costs(result.report);
  double worst = 0.0;
  for (int v = 0; v < 96; ++v) {
    for (int u = 0; u + 1 < 96; ++u) {
      if (s.mask(u, v) != 0 && s.mask(u + 1, v) != 0) {
        const double dg = (result.depth(u + 1, v) - result.depth(u, v)) - (noisy(u + 1, v) - noisy(u, v));
        worst = std::max(worst, std::abs(dg));
      }
    }
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("solve_depth: permutation of the pairs leaves the cost unchanged") {
  PlaneScene s;
  const auto noisy = add_noise(s.truth, s.mask, 0.1, 7);
  auto pairs = exact_pairs(s.truth, s.mask, s.t);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto &c : pairs.pairs) {
    c.target += Vec2(unit(rng) - 0.5, unit(rng) - 0.5);
    c.confidence = 0.2 + 0.8 * unit(rng);
  }
  const auto a = solve_depth(noisy, s.t, pairs, s.mask);
  std::shuffle(pairs.pairs.begin(), pairs.pairs.end(), rng);
  const auto b = solve_depth(noisy, s.t, pairs, s.mask);
  CHECK(std::abs(a.report.final_cost() - b.report.final_cost()) <= 1e-6);
}

TEST_CASE("solve_depth: starts from a given estimate and validates input") {
  PlaneScene s;
  const auto noisy = add_noise(s.truth, s.mask, 0.1, 10);
  const auto pairs = exact_pairs(s.truth, s.mask, s.t);
  const auto first = solve_depth(noisy, s.t, pairs, s.mask);
  const auto second = solve_depth(noisy, s.t, pairs, s.mask, {}, &first.depth);
  CHECK(second.report.initial_cost <= first.report.initial_cost);
  CHECK(second.report.final_cost() <= first.report.final_cost() * (1.0 + 1e-9));

  CorrespondenceSet two;
  two.pairs.assign(pairs.pairs.begin(), pairs.pairs.begin() + 2);
  try {
    (void)solve_depth(noisy, s.t, two, s.mask);
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::InsufficientCorrespondences);
  }
  SolverConfig bad;
  bad.lambda = -1.0;
  CHECK_THROWS_AS((void)solve_depth(noisy, s.t, pairs, s.mask, bad), Error);
}
