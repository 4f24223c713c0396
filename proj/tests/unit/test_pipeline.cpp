#include <doctest.h>

#include <edit3d/io.hpp>
#include <edit3d/mock_oracles.hpp>
#include <edit3d/pipeline.hpp>

#include "support/mock_scene.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

using namespace edit3d;
using namespace edit3d::pipeline;

namespace {

/// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() / ("edit3d-pipeline-" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

EditSession scene_session(const oracle::MockSceneOracle &mock, geom::RigidTransform t) {
  return make_session("s", mock.source().image, mock.source().object_mask, std::move(t), mock.config().camera);
}

double foreground_rmse(const geom::DepthMap &d, const Grid<double> &truth, const Mask &m) {
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) {
      se += (d.values[i] - truth[i]) * (d.values[i] - truth[i]);
      ++n;
    }
  }
  return std::sqrt(se / static_cast<double>(n));
}

/// Confidence-weighted distance between the warp's targets and where the points really go.
double warp_pair_error(const align::CorrespondenceSet &pairs, const oracle::MockSceneOracle &mock) {
  double sum = 0.0;
  double weight = 0.0;
  for (const auto &p : pairs.pairs) {
    const auto truth = mock.true_target(p.source);
    if (truth) {
      sum += p.confidence * (p.target - *truth).norm();
      weight += p.confidence;
    }
  }
  return sum / weight;
}

/// Forwards to the identity mock but can fail or withhold matches on demand.
class Faulty final : public oracle::Oracle {
public:
  int fail_undistort_after = -1; // number of successful undistort calls before failing
  bool zero_confidence = false;
  oracle::CapabilitySet caps = inner_.capabilities();

  std::string name() const override { return "faulty"; }
  oracle::CapabilitySet capabilities() const override { return caps; }
  Grid<double> estimate_depth(const Image &i) override { return inner_.estimate_depth(i); }
  Image inpaint(const oracle::InpaintRequest &r) override { return inner_.inpaint(r); }
  Image undistort(const oracle::UndistortRequest &r) override {
    if (fail_undistort_after >= 0 && undistort_calls_++ >= fail_undistort_after) {
      fail(ErrorKind::OracleTransport, "connection reset");
    }
    return inner_.undistort(r);
  }
  oracle::MatchResult match_dense(const Image &a, const Image &b) override {
    auto m = inner_.match_dense(a, b);
    if (zero_confidence) {
      m.confidence.fill(0.0);
    }
    return m;
  }
  std::string caption(const Image &i) override { return inner_.caption(i); }
  std::string tune_adaptation(const Image &i, const std::string &s) override { return inner_.tune_adaptation(i, s); }
  std::vector<double> embed(const Image &i) override { return inner_.embed(i); }

private:
  oracle::IdentityMock inner_;
  int undistort_calls_ = 0;
};

Image gradient_image(int w, int h) {
  Image img(w, h);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      img(u, v) = {static_cast<float>(u) / w, static_cast<float>(v) / h, 0.5F};
    }
  }
  return img;
}

Mask centre_square(int w, int h, int half) {
  Mask m(w, h, 0);
  for (int v = h / 2 - half; v < h / 2 + half; ++v) {
    for (int u = w / 2 - half; u < w / 2 + half; ++u) {
      m(u, v) = 1;
    }
  }
  return m;
}

} // namespace

TEST_CASE("edit config: defaults, validation and JSON") {
  EditConfig c;
  CHECK(c.iterations == 3);
  CHECK(c.sigma_schedule == std::vector<double>{0.5, 0.4, 0.3});
  CHECK_NOTHROW(c.validate());

  EditConfig bad = c;
  bad.iterations = 2;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.sigma_schedule = {0.3, 0.4, 0.5};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.sigma_schedule = {1.2, 0.4, 0.3};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.sigma_schedule = {0.5, 0.4, 0.0};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.stretch_threshold = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);

  c.sigma_schedule = {0.6, 0.6};
  c.iterations = 2;
  c.solver.lambda = 0.25;
  c.oracle = "http://localhost:9000";
  c.seed = 11;
  nlohmann::json j = c;
  const EditConfig back = j.get<EditConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.solver.lambda == 0.25);

  const EditConfig from_schedule = nlohmann::json{{"sigma_schedule", {0.9, 0.1}}}.get<EditConfig>();
  CHECK(from_schedule.iterations == 2);
  const nlohmann::json wrong_type = {{"iterations", "three"}};
  CHECK_THROWS_AS((void)wrong_type.get<EditConfig>(), Error);

  CHECK(parse_schedule("0.5,0.4,0.3") == std::vector<double>{0.5, 0.4, 0.3});
  CHECK_THROWS_AS((void)parse_schedule("0.5,,0.3"), Error);
  CHECK_THROWS_AS((void)parse_schedule("0.5,x"), Error);
}

TEST_CASE("session validation") {
  const Image img = gradient_image(16, 12);
  CHECK_THROWS_AS((void)make_session("s", img, Mask(16, 12, 0), {}), Error);
  CHECK_THROWS_AS((void)make_session("s", img, Mask(12, 16, 1), {}), Error);
  const EditSession s = make_session("s", img, Mask(16, 12, 1), {});
  CHECK(s.intrinsics == geom::CameraIntrinsics::from_vertical_fov(16, 12));
  try {
    (void)make_session("s", img, Mask(16, 12, 0), {});
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::EmptySelection);
  }
}

TEST_CASE("prepare with the scene mock") {
  oracle::MockSceneOracle mock(testing::room_scene({.size = 96}));
  RecordingOracle rec(mock);
  EditSession s = scene_session(mock, mock.config().edit);
  prepare(s, rec, {});
  CHECK(s.prepared);
  CHECK(s.initial_depth.values == mock.source().depth);
  CHECK(s.transform.pivot_resolved());
  for (std::size_t i = 0; i < s.source.size(); ++i) {
    if (!s.selection[i]) {
      REQUIRE(s.background[i] == s.source[i]);
    }
  }
  // Inside the hole the fill reproduces the object-free render.
  const Mask inner = mask::erode(s.selection, 1);
  CHECK(psnr(s.background, mock.background().image, &inner) > 60.0);

  const std::size_t calls = rec.calls().size();
  const Image background = s.background;
  prepare(s, rec, {});
  CHECK(rec.calls().size() == calls);
  CHECK(s.background == background);
}

TEST_CASE("prepare fails fast on missing capabilities") {
  Faulty f;
  f.caps.erase(oracle::Capability::Undistort);
  f.caps.erase(oracle::Capability::DenseMatch);
  EditSession s = make_session("s", gradient_image(16, 16), centre_square(16, 16, 4), {});
  try {
    prepare(s, f, {});
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::CapabilityMissing);
    CHECK(std::string(e.what()).find("undistort") != std::string::npos);
    CHECK(std::string(e.what()).find("match_dense") != std::string::npos);
  }
  CHECK_FALSE(s.prepared);
}

TEST_CASE("synth_view: identity edit reproduces the source") {
  oracle::MockSceneOracle mock(testing::room_scene({.size = 96, .yaw_deg = 0.0}));
  EditSession s = scene_session(mock, geom::RigidTransform::identity());
  prepare(s, mock, {});
  const SynthResult r = synth_view(s, mock, {});
  CHECK(psnr(r.view, s.source) >= 45.0);
  CHECK(mask::count(mask::intersect(r.inpaint_mask, r.warp.visible_mask)) == 0);
}

TEST_CASE("synth_view: 20 degree rotation matches the rendered target") {
  oracle::MockSceneOracle mock(testing::room_scene({.size = 128, .yaw_deg = 20.0}));
  EditSession s = scene_session(mock, mock.config().edit);
  prepare(s, mock, {});
  const SynthResult r = synth_view(s, mock, {});
  CHECK(mask::count(mask::intersect(r.inpaint_mask, r.warp.visible_mask)) == 0);
  // Boundary pixels mix object and background colours in the renderer but not in the warp.
  const Mask interior = mask::erode(r.warp.visible_mask, 1);
  REQUIRE(mask::count(interior) > 500);
  const double p = psnr(r.view, mock.edited().image, &interior);
  MESSAGE("visible PSNR " << p);
  CHECK(p >= 30.0);
  CHECK(psnr(r.view, mock.edited().image) >= 25.0);
}

TEST_CASE("synth_view: object moved out of frame") {
  oracle::MockSceneOracle mock(testing::room_scene({.size = 64}));
  const geom::RigidTransform away(geom::Quat::Identity(), geom::Vec3(40.0, 0.0, 0.0), geom::Vec3(0.0, 0.3, 2.2));
  EditSession s = scene_session(mock, away);
  prepare(s, mock, {});
  try {
    (void)synth_view(s, mock, {});
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::EditOutOfFrame);
  }
}

TEST_CASE("run_edit: closed loop with the scene mock") {
  oracle::MockSceneOracle mock(testing::room_scene({.size = 128, .yaw_deg = 20.0, .depth_scale = 1.12,
                                                    .depth_offset = 0.05}));
  EditSession s = scene_session(mock, mock.config().edit);
  int seen = 0;
  const EditResult r = run_edit(s, mock, {}, [&](const IterationTrace &t) { CHECK(t.index == seen++); });
  REQUIRE(r.traces.size() == 3);
  CHECK(seen == 3);
  CHECK(r.image == r.traces.back().undistorted);

  const Grid<double> &truth = mock.source().depth;
  const Mask &m = s.selection;
  std::vector<double> rmse{foreground_rmse(r.traces.front().depth_pre, truth, m)};
  std::vector<double> pair_error;
  for (const IterationTrace &t : r.traces) {
    rmse.push_back(foreground_rmse(t.depth_post, truth, m));
    pair_error.push_back(warp_pair_error(t.warp_pairs, mock));
    CHECK(t.solver.has_value());
    CHECK(t.warning.empty());
  }
  MESSAGE("depth rmse " << rmse[0] << " " << rmse[1] << " " << rmse[2] << " " << rmse[3]);
  MESSAGE("pair error " << pair_error[0] << " " << pair_error[1] << " " << pair_error[2]);
  for (std::size_t i = 1; i < rmse.size(); ++i) {
    CHECK(rmse[i] <= rmse[i - 1]);
  }
  CHECK(rmse.back() < 0.5 * rmse.front());
  for (std::size_t i = 1; i < pair_error.size(); ++i) {
    CHECK(pair_error[i] <= pair_error[i - 1]);
  }

  const std::vector<double> recorded{r.traces[0].sigma, r.traces[1].sigma, r.traces[2].sigma};
  CHECK(recorded == EditConfig{}.sigma_schedule);

  // Untouched pixels keep their exact source values.
  const IterationTrace &last = r.traces.back();
  const Mask touched = mask::unite(mask::unite(m, last.visible_mask), last.inpaint_mask);
  for (std::size_t i = 0; i < touched.size(); ++i) {
    if (!touched[i]) {
      REQUIRE(r.image[i] == s.source[i]);
    }
  }
  CHECK(last.metrics.mean_confidence > 0.0);
  CHECK(last.metrics.perceptual_similarity.has_value());
}

TEST_CASE("run_edit is deterministic") {
  auto run = [] {
    oracle::MockSceneOracle mock(testing::room_scene({.size = 96, .depth_scale = 1.1}));
    EditSession s = scene_session(mock, mock.config().edit);
    EditConfig c;
    c.sigma_schedule = {0.5, 0.4};
    c.iterations = 2;
    return run_edit(s, mock, c);
  };
  const EditResult a = run();
  const EditResult b = run();
  REQUIRE(a.traces.size() == b.traces.size());
  for (std::size_t k = 0; k < a.traces.size(); ++k) {
    CHECK(a.traces[k].synthesized == b.traces[k].synthesized);
    CHECK(a.traces[k].undistorted == b.traces[k].undistorted);
    CHECK(a.traces[k].depth_post.values.data().size() == b.traces[k].depth_post.values.data().size());
    CHECK(std::memcmp(a.traces[k].depth_post.values.data().data(), b.traces[k].depth_post.values.data().data(),
                      a.traces[k].depth_post.values.size() * sizeof(double)) == 0);
    CHECK(align::to_csv(a.traces[k].correspondences) == align::to_csv(b.traces[k].correspondences));
    CHECK(trace_summary(a.traces[k]) == trace_summary(b.traces[k]));
  }
}

TEST_CASE("run_edit: identity mock and identity edit") {
  oracle::IdentityMock mock;
  const Image img = gradient_image(48, 40);
  EditSession s = make_session("id", img, centre_square(48, 40, 8), geom::RigidTransform::identity());
  const EditResult r = run_edit(s, mock, {});
  CHECK(psnr(r.image, img) >= 40.0);
  REQUIRE(r.traces.size() == 3);
  CHECK(r.traces[0].sigma == 0.5);
  CHECK(r.traces[2].sigma == 0.3);
}

TEST_CASE("run_edit: missing correspondences skip alignment") {
  Faulty f;
  f.zero_confidence = true;
  EditSession s = make_session("deg", gradient_image(32, 32), centre_square(32, 32, 6),
                               geom::RigidTransform::about_axis(geom::Vec3::UnitY(), 0.2, geom::Vec3(0, 0, 2)));
  const EditResult r = run_edit(s, f, {});
  REQUIRE(r.traces.size() == 3);
  for (const IterationTrace &t : r.traces) {
    CHECK_FALSE(t.solver.has_value());
    CHECK(t.warning.find("alignment skipped") != std::string::npos);
    CHECK(t.depth_post.values == t.depth_pre.values);
  }
}

TEST_CASE("run_edit: oracle failure keeps the completed traces") {
  Faulty f;
  f.fail_undistort_after = 1;
  EditSession s = make_session("fail", gradient_image(32, 32), centre_square(32, 32, 6), {});
  std::vector<int> persisted;
  try {
    (void)run_edit(s, f, {}, [&](const IterationTrace &t) { persisted.push_back(t.index); });
    FAIL("expected an error");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::OracleTransport);
  }
  CHECK(persisted == std::vector<int>{0});
}

TEST_CASE("session directory round trip") {
  TempDir dir;
  oracle::MockSceneOracle mock(testing::room_scene({.size = 48}));
  EditSession s = scene_session(mock, mock.config().edit);
  write_inputs(dir.path, s);
  EditSession back = read_inputs(dir.path, "s");
  // Images are stored as 16-bit PNG.
  CHECK(io::encode_png(back.source) == io::encode_png(s.source));
  CHECK(back.selection == s.selection);
  CHECK(back.intrinsics == s.intrinsics);
  CHECK(back.requested_transform.is_identity() == s.requested_transform.is_identity());
  CHECK(back.requested_transform.rotation().isApprox(s.requested_transform.rotation(), 1e-15));

  CHECK_FALSE(read_prepared(dir.path, back));
  prepare(s, mock, {});
  write_prepared(dir.path, s);
  REQUIRE(read_prepared(dir.path, back));
  CHECK(back.prepared);
  CHECK(io::encode_png(back.background) == io::encode_png(s.background));
  CHECK(back.transform.pivot()->isApprox(*s.transform.pivot(), 1e-12));
  for (std::size_t i = 0; i < s.initial_depth.values.size(); ++i) {
    // Depth is stored as float32.
    REQUIRE(back.initial_depth.values[i] == doctest::Approx(s.initial_depth.values[i]).epsilon(1e-6));
  }

  EditConfig c;
  c.iterations = 1;
  c.sigma_schedule = {0.5};
  (void)run_edit(s, mock, c, [&](const IterationTrace &t) { write_trace(dir.path, t); });
  const auto it = iteration_dir(dir.path, 0);
  for (const char *f : {"warped.png", "synth.png", "undistorted.png", "depth_pre.f32", "depth_pre.json",
                        "depth_post.f32", "correspondences.csv", "metrics.json"}) {
    CHECK_MESSAGE(std::filesystem::exists(it / f), f);
  }
  const auto metrics = nlohmann::json::parse(io::read_text(it / "metrics.json"));
  CHECK(metrics.at("sigma") == 0.5);
  CHECK(metrics.at("metrics").at("lpips_source") == "warp-back-rmse");
  CHECK(align::from_csv(io::read_text(it / "correspondences.csv")).size() > 0);
}

TEST_CASE("recording oracle logs failures") {
  Faulty f;
  f.fail_undistort_after = 0;
  RecordingOracle rec(f);
  const oracle::UndistortRequest request{gradient_image(4, 4), 0.5, Mask(4, 4, 1), "s", "", 0};
  CHECK_THROWS_AS((void)rec.undistort(request), Error);
  const auto calls = rec.calls();
  REQUIRE(calls.size() == 1);
  CHECK(calls[0].operation == "undistort");
  CHECK_FALSE(calls[0].ok);
  CHECK(calls[0].error.find("transport: connection reset") != std::string::npos);
}
