#include <doctest.h>

#include <edit3d/mock_oracles.hpp>

#include "support/mock_scene.hpp"
#include "support/scenes.hpp"

#include <cmath>
#include <random>

using namespace edit3d;
using namespace edit3d::oracle;
using geom::Vec2;

namespace {

double cosine(const std::vector<double> &a, const std::vector<double> &b) {
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

Image noise_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.F, 1.F);
  Image img(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = {unit(rng), unit(rng), unit(rng)};
  }
  return img;
}

Mask random_mask(int w, int h, double p, std::mt19937_64 &rng) {
  std::bernoulli_distribution on(p);
  Mask m(w, h);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = on(rng) ? 1 : 0;
  }
  return m;
}

/// Both oracles under test; the conformance cases run against each.
std::vector<std::unique_ptr<Oracle>> all_mocks() {
  std::vector<std::unique_ptr<Oracle>> v;
  v.push_back(std::make_unique<IdentityMock>());
  v.push_back(std::make_unique<MockSceneOracle>(testing::room_scene({.size = 64})));
  return v;
}

} // namespace

TEST_CASE("capability names round trip") {
  for (Capability c : all_capabilities()) {
    CHECK(capability_from_string(to_string(c)) == c);
  }
  CHECK(all_capabilities().size() == 7);
  CHECK_THROWS_AS((void)capability_from_string("segment"), Error);
}

TEST_CASE("base oracle reports missing capabilities") {
  struct Bare final : Oracle {
    std::string name() const override { return "bare"; }
    CapabilitySet capabilities() const override { return {Capability::Caption}; }
  } bare;
  const Image img(4, 4);
  try {
    (void)bare.estimate_depth(img);
    FAIL("expected an exception");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::CapabilityMissing);
  }
  try {
    require_capabilities(bare, {Capability::Caption, Capability::Undistort, Capability::Embed});
    FAIL("expected an exception");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::CapabilityMissing);
    CHECK(std::string(e.what()).find("undistort, embed") != std::string::npos);
  }
  CHECK_NOTHROW(require_capabilities(bare, {Capability::Caption}));
}

TEST_CASE("conformance: sigma 0 undistort is bit-exact, dimensions and hole exterior preserved") {
  for (auto &oracle : all_mocks()) {
    CAPTURE(oracle->name());
    const Image img = noise_image(64, 64, 3);
    UndistortRequest u{img, 0.0, testing::disk_mask(64, 64, 30, 30, 12), "s", "", 0};
    CHECK(oracle->undistort(u) == img);

    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 3; ++trial) {
      const Mask hole = random_mask(64, 64, 0.3, rng);
      const Image out = oracle->inpaint({img, hole, std::nullopt, "", 0});
      REQUIRE(out.same_shape(img));
      for (std::size_t i = 0; i < img.size(); ++i) {
        if (!hole[i]) {
          REQUIRE(out[i] == img[i]);
        }
      }
    }
    CHECK(oracle->inpaint({img, Mask(64, 64, 0), std::nullopt, "", 0}) == img);

    const auto depth = oracle->estimate_depth(img);
    CHECK(depth.width() == 64);
    CHECK(depth.height() == 64);
    for (double d : depth.data()) {
      REQUIRE((std::isfinite(d) && d > 0.0));
    }

    const MatchResult m = oracle->match_dense(img, noise_image(64, 64, 4));
    CHECK_NOTHROW(m.validate(64, 64));

    const auto e = oracle->embed(img);
    CHECK(cosine(e, oracle->embed(img)) == doctest::Approx(1.0).epsilon(1e-12));
    double n2 = 0.0;
    for (double x : e) {
      n2 += x * x;
    }
    CHECK(n2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(oracle->caption(img) == oracle->caption(img));

    UndistortRequest bad = u;
    bad.sigma = 1.5;
    CHECK_THROWS_AS((void)oracle->undistort(bad), Error);
  }
}

TEST_CASE("identity mock: declared degenerate behaviour") {
  IdentityMock mock;
  const Image flat(16, 12, Rgb{0.4F, 0.4F, 0.4F});
  const auto depth = mock.estimate_depth(flat);
  for (double d : depth.data()) {
    REQUIRE(d == 2.0);
  }
  const Image img = noise_image(16, 12, 5);
  const MatchResult m = mock.match_dense(img, img);
  for (std::size_t i = 0; i < m.flow.size(); ++i) {
    REQUIRE(m.flow[i] == Vec2::Zero());
    REQUIRE(m.confidence[i] == 1.0);
  }
  const std::string handle = mock.tune_adaptation(img, "a");
  CHECK(handle == mock.tune_adaptation(img, "b"));
  CHECK(mock.undistort({img, 0.4, Mask(), "a", handle, 1}) == img);
}

TEST_CASE("fill_nearest agrees with brute force on random holes") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int w = 5 + static_cast<int>(rng() % 30);
    const int h = 5 + static_cast<int>(rng() % 30);
    const Image img = noise_image(w, h, rng());
    Mask hole = random_mask(w, h, 0.2 + 0.7 * (trial / 20.0), rng);
    hole(0, 0) = 0;
    const Image out = fill_nearest(img, hole);
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        if (!hole(u, v)) {
          REQUIRE(out(u, v) == img(u, v));
          continue;
        }
        int best = std::numeric_limits<int>::max();
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            if (!hole(x, y)) {
              best = std::min(best, (x - u) * (x - u) + (y - v) * (y - v));
            }
          }
        }
        // The copied colour must come from some known pixel at the minimal distance.
        bool found = false;
        for (int y = 0; y < h && !found; ++y) {
          for (int x = 0; x < w && !found; ++x) {
            found = !hole(x, y) && (x - u) * (x - u) + (y - v) * (y - v) == best && img(x, y) == out(u, v);
          }
        }
        REQUIRE(found);
      }
    }
  }
}

TEST_CASE("luminance embedding: unit length and scale invariance") {
  const Image img = testing::smooth_texture(40, 30);
  Image dim = img;
  for (std::size_t i = 0; i < dim.size(); ++i) {
    dim[i] = dim[i] * 0.5F;
  }
  CHECK(cosine(luminance_embedding(img), luminance_embedding(dim)) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(luminance_embedding(Image(8, 8)).size() == 256);
  CHECK(cosine(luminance_embedding(img), luminance_embedding(noise_image(40, 30, 9))) < 0.99);
}

TEST_CASE("scene: codes decode and background never does") {
  for (int face = 0; face < 6; ++face) {
    const auto c = scene::decode(scene::object_code(face, 0.25, 0.75));
    REQUIRE(c.has_value());
    CHECK(c->face == face);
    CHECK(c->s == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(c->t == doctest::Approx(0.75).epsilon(1e-6));
  }
  MockSceneOracle oracle(testing::room_scene());
  const auto &bg = oracle.background().image;
  for (std::size_t i = 0; i < bg.size(); ++i) {
    REQUIRE_FALSE(scene::decode(bg[i]).has_value());
  }
}

TEST_CASE("scene: rendered depth matches analytic intersections") {
  const auto cfg = testing::room_scene();
  MockSceneOracle oracle(cfg);
  const auto &k = cfg.camera;
  const auto &src = oracle.source();
  int object_pixels = 0;
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const geom::Vec3 ray((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      if (src.object_mask(u, v)) {
        ++object_pixels;
        // The hit point lies on the surface of the rotated box.
        const geom::Vec3 local = cfg.object.orientation.inverse() * (src.depth(u, v) * ray - cfg.object.center);
        REQUIRE(local.cwiseAbs().maxCoeff() == doctest::Approx(0.3).epsilon(1e-9));
      } else {
        double expected = cfg.far;
        for (const auto &p : cfg.planes) {
          const double t = p.offset / p.normal.dot(ray);
          if (t > 0.0) {
            expected = std::min(expected, t);
          }
        }
        REQUIRE(src.depth(u, v) == doctest::Approx(expected).epsilon(1e-12));
      }
    }
  }
  CHECK(object_pixels > 500);
}

TEST_CASE("scene oracle: estimate_depth returns the (perturbed) truth") {
  auto opts = testing::RoomOptions{};
  MockSceneOracle exact(testing::room_scene(opts));
  CHECK(exact.estimate_depth(exact.source().image) == exact.source().depth);

  opts.depth_scale = 1.2;
  opts.depth_offset = -0.1;
  MockSceneOracle perturbed(testing::room_scene(opts));
  const auto d = perturbed.estimate_depth(perturbed.source().image);
  const auto &truth = perturbed.source();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double want = truth.object_mask[i] ? truth.depth[i] * 1.2 - 0.1 : truth.depth[i];
    REQUIRE(d[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("scene oracle: inpaint fills from the matching ground truth") {
  MockSceneOracle oracle(testing::room_scene());
  const auto &src = oracle.source();
  // Background layer: the known part is object-free, the hole gets the object-free rendering.
  const Mask hole = mask::dilate(src.object_mask, 2);
  const Image bg = oracle.inpaint({src.image, hole, std::nullopt, "", 0});
  CHECK(bg == oracle.background().image);

  // Composite view: known pixels show the edited object, the hole gets the edited rendering.
  const auto &edited = oracle.edited();
  const Mask ring = mask::subtract(mask::dilate(edited.object_mask, 3), mask::erode(edited.object_mask, 3));
  const Image filled = oracle.inpaint({edited.image, ring, std::nullopt, "", 0});
  CHECK(filled == edited.image);
}

TEST_CASE("scene oracle: undistort blends toward the edited rendering") {
  MockSceneOracle oracle(testing::room_scene());
  const Image input = noise_image(128, 128, 8);
  const Mask m = testing::rect_mask(128, 128, 30, 30, 90, 90);
  const auto &gt = oracle.edited().image;

  const Image full = oracle.undistort({input, 1.0, m, "s", "", 0});
  const Image half = oracle.undistort({input, 0.5, m, "s", "", 0});
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (m[i]) {
      REQUIRE(full[i] == gt[i]);
      const Rgb mid = 0.5F * input[i] + 0.5F * gt[i];
      REQUIRE(std::abs(half[i].r - mid.r) < 1e-6F);
      REQUIRE(std::abs(half[i].g - mid.g) < 1e-6F);
      REQUIRE(std::abs(half[i].b - mid.b) < 1e-6F);
    } else {
      REQUIRE(full[i] == input[i]);
      REQUIRE(half[i] == input[i]);
    }
  }
}

TEST_CASE("scene oracle: adaptation handles") {
  MockSceneOracle oracle(testing::room_scene({.size = 32}));
  const Image img = oracle.source().image;
  const std::string h = oracle.tune_adaptation(img, "session-1");
  CHECK(h == oracle.tune_adaptation(img, "session-1"));
  CHECK(h != oracle.tune_adaptation(img, "session-2"));
  for (double sigma : {0.5, 0.4, 0.3}) {
    CHECK_NOTHROW((void)oracle.undistort({img, sigma, Mask(), "session-1", h, 0}));
  }
  try {
    (void)oracle.undistort({img, 0.3, Mask(), "session-1", "forged", 0});
    FAIL("expected an exception");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::OracleRequest);
  }
}

TEST_CASE("scene oracle: self match is zero flow") {
  MockSceneOracle oracle(testing::room_scene());
  const Image &img = oracle.source().image;
  const MatchResult m = oracle.match_dense(img, img);
  std::size_t confident = 0;
  for (std::size_t i = 0; i < m.flow.size(); ++i) {
    if (m.confidence[i] > 0.0) {
      ++confident;
      REQUIRE(m.flow[i].norm() < 1e-9);
    }
  }
  // Everything except face edges and the silhouette rim.
  CHECK(confident > mask::count(mask::erode(oracle.source().object_mask, 2)) * 8 / 10);
}

TEST_CASE("scene oracle: flow between renderings equals the geometric displacement") {
  for (double yaw : {10.0, 20.0, 30.0}) {
    CAPTURE(yaw);
    MockSceneOracle oracle(testing::room_scene({.yaw_deg = yaw, .translation = {0.05, -0.02, 0.1}}));
    const MatchResult m = oracle.match_dense(oracle.source().image, oracle.edited().image);
    std::size_t confident = 0;
    double worst = 0.0;
    for (int v = 0; v < m.flow.height(); ++v) {
      for (int u = 0; u < m.flow.width(); ++u) {
        if (m.confidence(u, v) == 0.0) {
          continue;
        }
        ++confident;
        const auto truth = oracle.true_target(Vec2(u, v));
        REQUIRE(truth.has_value());
        worst = std::max(worst, (Vec2(u, v) + m.flow(u, v) - *truth).norm());
      }
    }
    MESSAGE("max flow error " << worst << " px over " << confident << " pixels");
    CHECK(worst < 0.5);
    CHECK(confident > mask::count(oracle.source().object_mask) / 3);
  }
}

TEST_CASE("scene oracle: determinism and config round trip") {
  const auto cfg = testing::room_scene({.size = 48, .quad = true});
  nlohmann::json j = cfg;
  const auto back = j.get<scene::Config>();
  CHECK(nlohmann::json(back) == j);
  MockSceneOracle a(cfg);
  MockSceneOracle b(back);
  CHECK(a.source().image == b.source().image);
  CHECK(a.edited().image == b.edited().image);
  CHECK(a.match_dense(a.source().image, a.edited().image).flow ==
        b.match_dense(b.source().image, b.edited().image).flow);
}

TEST_CASE("scene config validation") {
  auto cfg = testing::room_scene();
  cfg.planes[0].base.b = 0.6F;
  CHECK_THROWS_AS(MockSceneOracle{cfg}, Error);
  const nlohmann::json bad = {{"camera", {{"width", 32}, {"height", 32}}}, {"object", {{"kind", "sphere"}}}};
  CHECK_THROWS_AS((void)bad.get<scene::Config>(), Error);
  // Object behind the camera is invisible.
  cfg = testing::room_scene();
  cfg.object.center.z() = -3.0;
  CHECK_THROWS_AS(MockSceneOracle{cfg}, Error);
}

TEST_CASE("scene oracle: object-centroid pivot resolves to the visible surface mean") {
  auto cfg = testing::room_scene();
  cfg.edit = geom::RigidTransform(cfg.edit.rotation(), geom::Vec3::Zero(), std::nullopt);
  MockSceneOracle oracle(cfg);
  REQUIRE(oracle.edit().pivot_resolved());
  const geom::DepthMap d(oracle.source().depth, cfg.camera);
  const geom::Vec3 c = geom::selection_centroid(d, oracle.source().object_mask);
  CHECK((*oracle.edit().pivot() - c).norm() < 1e-12);
}
