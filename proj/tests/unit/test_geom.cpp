#include <doctest.h>

#include <edit3d/geom.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace edit3d;
using namespace edit3d::geom;

namespace {

CameraIntrinsics test_camera() { return {512.0, 512.0, 256.0, 256.0, 512, 512}; }

RigidTransform random_transform(std::mt19937_64 &rng, bool unit_scale = false) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> s(0.5, 2.0);
  const Quat q(n(rng), n(rng), n(rng), n(rng));
  return {q, Vec3(n(rng), n(rng), n(rng)), Vec3(n(rng), n(rng), 2.0 + n(rng)), unit_scale ? 1.0 : s(rng)};
}

} // namespace

TEST_CASE("unproject: principal point and hand-computed offset") {
  const auto k = test_camera();
  const Vec3 centre = unproject({256.0, 256.0}, 2.0, k);
  CHECK(centre.isApprox(Vec3(0.0, 0.0, 2.0)));
  const Vec3 right = unproject({512.0, 256.0}, 2.0, k);
  CHECK(right.x() == doctest::Approx(1.0));
  CHECK(right.y() == doctest::Approx(0.0));
  CHECK(right.z() == doctest::Approx(2.0));
}

TEST_CASE("unproject rejects invalid depth") {
  const auto k = test_camera();
  for (const double d : {0.0, -1.0, std::nan(""), std::numeric_limits<double>::infinity()}) {
    try {
      (void)unproject({10.0, 10.0}, d, k);
      FAIL("expected an error");
    } catch (const Error &e) {
      CHECK(e.kind() == ErrorKind::InvalidInput);
    }
  }
}

TEST_CASE("project: examples and behind-camera error") {
  const auto k = test_camera();
  CHECK(project({0.0, 0.0, 1.0}, k).isApprox(Vec2(256.0, 256.0)));
  CHECK(project({1.0, 0.0, 2.0}, k).isApprox(Vec2(512.0, 256.0)));
  try {
    (void)project({0.0, 0.0, 0.0}, k);
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::BehindCamera);
  }
}

TEST_CASE("project and unproject are mutual inverses on random samples") {
  const auto k = test_camera();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pix(0.0, 511.0);
  std::uniform_real_distribution<double> dep(0.1, 50.0);
  double worst_pixel = 0.0;
  double worst_point = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Vec2 p(pix(rng), pix(rng));
    const double d = dep(rng);
    worst_pixel = std::max(worst_pixel, (project(unproject(p, d, k), k) - p).norm());
    const Vec3 x = unproject(p, d, k);
    worst_point = std::max(worst_point, (unproject(project(x, k), x.z(), k) - x).norm());
  }
  CHECK(worst_pixel < 1e-9);
  CHECK(worst_point < 1e-9);
}

TEST_CASE("apply_transform: identity and half-turn about a pivot") {
  const Vec3 p(0.5, 0.0, 2.0);
  CHECK(RigidTransform::identity().apply(p) == p);
  const auto half_turn = RigidTransform::about_axis(Vec3::UnitY(), std::numbers::pi, Vec3(0.0, 0.0, 2.0));
  CHECK((half_turn.apply(p) - Vec3(-0.5, 0.0, 2.0)).norm() < 1e-12);
}

TEST_CASE("unresolved pivot is a contract violation") {
  const RigidTransform t(Quat::Identity(), Vec3(1.0, 0.0, 0.0), std::nullopt, 1.0);
  CHECK_FALSE(t.pivot_resolved());
  try {
    (void)t.apply(Vec3::Zero());
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::ContractViolation);
  }
  const auto resolved = t.resolved(Vec3(0.0, 0.0, 3.0));
  CHECK(resolved.apply(Vec3::Zero()).isApprox(Vec3(1.0, 0.0, 0.0)));
}

TEST_CASE("transform group properties on random samples") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst_inverse = 0.0;
  double worst_assoc = 0.0;
  double worst_distance = 0.0;
  double worst_identity = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_transform(rng);
    const auto b = random_transform(rng);
    const auto c = random_transform(rng);
    const Vec3 p(n(rng), n(rng), n(rng));
    const Vec3 q(n(rng), n(rng), n(rng));
    worst_inverse = std::max(worst_inverse, (a.inverse().apply(a.apply(p)) - p).norm());
    worst_assoc = std::max(worst_assoc, (((a * b) * c).apply(p) - (a * (b * c)).apply(p)).norm());
    worst_assoc = std::max(worst_assoc, ((a * b).apply(p) - a.apply(b.apply(p))).norm());
    const auto rigid = random_transform(rng, true);
    worst_distance =
        std::max(worst_distance, std::abs((rigid.apply(p) - rigid.apply(q)).norm() - (p - q).norm()));
    const auto id = a * a.inverse();
    worst_identity = std::max({worst_identity, id.rotation().angularDistance(Quat::Identity()),
                               std::abs(id.scale() - 1.0), (id.apply(p) - p).norm()});
  }
  CHECK(worst_inverse < 1e-9);
  CHECK(worst_assoc < 1e-9);
  CHECK(worst_distance < 1e-9);
  CHECK(worst_identity < 1e-9);
}

TEST_CASE("quaternions are stored normalised") {
  const RigidTransform t(Quat(2.0, 0.0, 0.0, 0.0), Vec3::Zero(), Vec3::Zero(), 1.0);
  CHECK(std::abs(t.rotation().norm() - 1.0) < 1e-12);
  CHECK_THROWS_AS(RigidTransform(Quat(0.0, 0.0, 0.0, 0.0), Vec3::Zero(), Vec3::Zero(), 1.0), Error);
  CHECK_THROWS_AS(RigidTransform(Quat::Identity(), Vec3::Zero(), Vec3::Zero(), 0.0), Error);
}

TEST_CASE("depth/disparity conversion") {
  const CameraIntrinsics k{10.0, 10.0, 1.5, 1.0, 4, 3};
  DepthMap d(k, 2.0);
  d(1, 1) = std::nan("");
  d(2, 2) = 1e-9;
  const auto disp = depth_to_disparity(d, 100.0);
  CHECK(disp(0, 0) == 0.5);
  CHECK(std::isnan(disp(1, 1)));
  CHECK(disp(2, 2) == 100.0);
  const auto back = disparity_to_depth(disp, k, 100.0);
  CHECK(back(0, 0) == 2.0);
  CHECK(std::isnan(back(1, 1)));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dep(0.05, 100.0);
  DepthMap random(k, 1.0);
  for (auto &z : random.values.data()) {
    z = dep(rng);
  }
  const auto round_trip = disparity_to_depth(depth_to_disparity(random), k);
  for (std::size_t i = 0; i < random.values.size(); ++i) {
    CHECK(std::abs(round_trip.values[i] - random.values[i]) <= 1e-6 * random.values[i]);
  }
}

TEST_CASE("default intrinsics use a 55 degree vertical field of view") {
  const auto k = CameraIntrinsics::from_vertical_fov(640, 480);
  CHECK(k.cx == doctest::Approx(319.5));
  CHECK(k.cy == doctest::Approx(239.5));
  const double half = std::atan(0.5 * 480 / k.fy) * 180.0 / std::numbers::pi;
  CHECK(2.0 * half == doctest::Approx(55.0));
  k.validate();
  CHECK_THROWS_AS((CameraIntrinsics{0.0, 1.0, 0.0, 0.0, 4, 4}.validate()), Error);
  CHECK_THROWS_AS((CameraIntrinsics{1.0, 1.0, 4.0, 0.0, 4, 4}.validate()), Error);
}

TEST_CASE("transform and intrinsics JSON") {
  const auto j = nlohmann::json::parse(
      R"({"rotation":[1,0,0,0],"translation":[0.1,0.2,0.3],"pivot":"object-centroid","scale":1.5})");
  const auto t = j.get<RigidTransform>();
  CHECK_FALSE(t.pivot_resolved());
  CHECK(t.scale() == 1.5);
  CHECK(t.translation().isApprox(Vec3(0.1, 0.2, 0.3)));
  const nlohmann::json back = t;
  CHECK(back == j);

  const auto with_pivot = nlohmann::json::parse(R"({"rotation":[0,0,1,0],"pivot":[0,0,2]})").get<RigidTransform>();
  CHECK((with_pivot.apply(Vec3(0.5, 0.0, 2.0)) - Vec3(-0.5, 0.0, 2.0)).norm() < 1e-12);

  CHECK_THROWS_AS(nlohmann::json::parse(R"({"rotation":[1,0,0]})").get<RigidTransform>(), Error);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"pivot":"centre"})").get<RigidTransform>(), Error);

  const auto k = nlohmann::json::parse(R"({"fx":500,"fy":500,"cx":320,"cy":240,"width":640,"height":480})")
                     .get<CameraIntrinsics>();
  CHECK(k.width == 640);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"fx":500})").get<CameraIntrinsics>(), Error);
}
