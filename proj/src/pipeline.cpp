#include <edit3d/io.hpp>
#include <edit3d/pipeline.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>

namespace edit3d::pipeline {

namespace {

using nlohmann::json;

constexpr int kMatchSnapRadius = 1;

void to_json(json &j, const align::SolverConfig &s) {
  j = {{"lambda", s.lambda},
       {"max_iterations", s.max_iterations},
       {"initial_damping", s.initial_damping},
       {"cost_tolerance", s.cost_tolerance},
       {"gradient_tolerance", s.gradient_tolerance},
       {"confidence_floor", s.confidence_floor},
       {"robust_scale", s.robust_scale}};
}

void from_json(const json &j, align::SolverConfig &s) {
  s.lambda = j.value("lambda", s.lambda);
  s.max_iterations = j.value("max_iterations", s.max_iterations);
  s.initial_damping = j.value("initial_damping", s.initial_damping);
  s.cost_tolerance = j.value("cost_tolerance", s.cost_tolerance);
  s.gradient_tolerance = j.value("gradient_tolerance", s.gradient_tolerance);
  s.confidence_floor = j.value("confidence_floor", s.confidence_floor);
  s.robust_scale = j.value("robust_scale", s.robust_scale);
}

Grid<double> synth_depth_hint(const geom::DepthMap &background, const warp::WarpResult &w) {
  Grid<double> hint = background.values;
  for (std::size_t i = 0; i < hint.size(); ++i) {
    if (w.visible_mask[i]) {
      hint[i] = w.target_depth[i];
    }
  }
  return hint;
}

geom::DepthMap depth_from_oracle(Grid<double> values, const geom::CameraIntrinsics &k) {
  require(values.width() == k.width && values.height() == k.height, ErrorKind::OracleRequest,
          "oracle depth has the wrong size");
  return {std::move(values), k};
}

} // namespace

void EditConfig::validate() const {
  require(iterations >= 1, ErrorKind::InvalidConfig, "iterations must be at least 1");
  require(sigma_schedule.size() == static_cast<std::size_t>(iterations), ErrorKind::InvalidConfig,
          fmt::format("sigma schedule has {} values for {} iterations", sigma_schedule.size(), iterations));
  for (std::size_t i = 0; i < sigma_schedule.size(); ++i) {
    const double s = sigma_schedule[i];
    require(std::isfinite(s) && s > 0.0 && s <= 1.0, ErrorKind::InvalidConfig,
            fmt::format("sigma {} outside (0, 1]", s));
    require(i == 0 || s <= sigma_schedule[i - 1], ErrorKind::InvalidConfig, "sigma schedule must be non-increasing");
  }
  require(stretch_threshold > 1.0 && std::isfinite(stretch_threshold), ErrorKind::InvalidConfig,
          "stretch threshold must exceed 1");
  require(correspondence_stride >= 1, ErrorKind::InvalidConfig, "correspondence stride must be at least 1");
  solver.validate();
  mesh.validate();
  require(raster.ambiguity_dilation >= 0, ErrorKind::InvalidConfig, "ambiguity dilation must be non-negative");
}

void to_json(json &j, const EditConfig &c) {
  j = {{"iterations", c.iterations},
       {"sigma_schedule", c.sigma_schedule},
       {"stretch_threshold", c.stretch_threshold},
       {"correspondence_stride", c.correspondence_stride},
       {"mesh",
        {{"discontinuity_threshold", c.mesh.discontinuity_threshold},
         {"thickness_layers", c.mesh.thickness_layers},
         {"thickness_deepen", c.mesh.thickness_deepen}}},
       {"ambiguity_dilation", c.raster.ambiguity_dilation},
       {"oracle", c.oracle},
       {"seed", c.seed},
       {"prompt", c.prompt}};
  json s;
  to_json(s, c.solver);
  j["solver"] = s;
}

void from_json(const json &j, EditConfig &c) {
  require(j.is_object(), ErrorKind::InvalidConfig, "edit config must be a JSON object");
  try {
    if (j.contains("sigma_schedule")) {
      c.sigma_schedule = j.at("sigma_schedule").get<std::vector<double>>();
      c.iterations = static_cast<int>(c.sigma_schedule.size());
    }
    c.iterations = j.value("iterations", c.iterations);
    c.stretch_threshold = j.value("stretch_threshold", c.stretch_threshold);
    c.correspondence_stride = j.value("correspondence_stride", c.correspondence_stride);
    if (j.contains("mesh")) {
      const json &m = j.at("mesh");
      c.mesh.discontinuity_threshold = m.value("discontinuity_threshold", c.mesh.discontinuity_threshold);
      c.mesh.thickness_layers = m.value("thickness_layers", c.mesh.thickness_layers);
      c.mesh.thickness_deepen = m.value("thickness_deepen", c.mesh.thickness_deepen);
    }
    c.raster.ambiguity_dilation = j.value("ambiguity_dilation", c.raster.ambiguity_dilation);
    if (j.contains("solver")) {
      from_json(j.at("solver"), c.solver);
    }
    c.oracle = j.value("oracle", c.oracle);
    c.seed = j.value("seed", c.seed);
    c.prompt = j.value("prompt", c.prompt);
  } catch (const json::exception &e) {
    fail(ErrorKind::InvalidConfig, fmt::format("edit config: {}", e.what()));
  }
}

std::vector<double> parse_schedule(std::string_view text) {
  std::vector<double> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    std::string item(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(item, &used);
    } catch (const std::exception &) {
      used = 0;
    }
    require(used > 0 && used == item.size(), ErrorKind::InvalidConfig,
            fmt::format("sigma schedule: '{}' is not a number", item));
    out.push_back(value);
  }
  require(!out.empty(), ErrorKind::InvalidConfig, "sigma schedule is empty");
  return out;
}

void EditSession::validate() const {
  require(!source.empty(), ErrorKind::InvalidInput, "source image is empty");
  require(selection.same_shape(source), ErrorKind::InvalidInput,
          fmt::format("mask is {}x{} but the image is {}x{}", selection.width(), selection.height(), source.width(),
                      source.height()));
  require(mask::any(selection), ErrorKind::EmptySelection, "selection mask is empty");
  intrinsics.validate();
  require(intrinsics.width == source.width() && intrinsics.height == source.height(), ErrorKind::InvalidInput,
          "intrinsics size does not match the image");
  for (const Rgb &c : source.data()) {
    require(std::isfinite(c.r) && std::isfinite(c.g) && std::isfinite(c.b), ErrorKind::InvalidInput,
            "source image has non-finite samples");
  }
}

EditSession make_session(std::string id, Image source, Mask selection, geom::RigidTransform transform,
                         std::optional<geom::CameraIntrinsics> intrinsics) {
  EditSession s;
  s.id = std::move(id);
  s.intrinsics = intrinsics ? *intrinsics : geom::CameraIntrinsics::from_vertical_fov(source.width(), source.height());
  s.source = std::move(source);
  s.selection = std::move(selection);
  s.requested_transform = std::move(transform);
  s.validate();
  return s;
}

void prepare(EditSession &session, oracle::Oracle &oracle, const EditConfig &config) {
  oracle::require_capabilities(oracle, kRequiredCapabilities);
  if (!session.prepared) {
    session.validate();
    config.validate();
    session.initial_depth = depth_from_oracle(oracle.estimate_depth(session.source), session.intrinsics);
    session.depth = session.initial_depth;
    for (std::size_t i = 0; i < session.selection.size(); ++i) {
      if (session.selection[i]) {
        const double d = session.depth.values[i];
        require(std::isfinite(d) && d > 0.0, ErrorKind::OracleRequest, "oracle depth is invalid under the selection");
      }
    }
    session.transform =
        session.requested_transform.resolved(geom::selection_centroid(session.depth, session.selection));

    session.prompt = config.prompt;
    if (session.prompt.empty() && oracle.capabilities().contains(oracle::Capability::Caption)) {
      session.prompt = oracle.caption(session.source);
    }
    session.background_depth = bginpaint::inpaint_background_depth(session.depth, session.selection, config.background);
    oracle::InpaintRequest request{session.source, session.selection, session.background_depth.values,
                                   session.prompt, config.seed};
    session.background = oracle.inpaint(request);
    require(session.background.same_shape(session.source), ErrorKind::OracleRequest,
            "oracle inpaint returned the wrong size");
    session.prepared = true;
  }
  if (session.adaptation.empty()) {
    session.adaptation = oracle.tune_adaptation(session.source, session.id);
  }
}

SynthResult synth_view(const EditSession &session, oracle::Oracle &oracle, const EditConfig &config,
                       std::uint64_t seed) {
  require(session.prepared, ErrorKind::ContractViolation, "synth_view: session is not prepared");
  const warp::TexturedDepthMesh mesh = warp::lift_to_mesh(session.source, session.selection, session.depth, config.mesh);
  SynthResult out;
  out.warp = warp::rasterize(mesh, session.transform, session.intrinsics, config.raster);
  const Mask stretched = warp::stretch_mask(out.warp, config.stretch_threshold);
  require(mask::any(out.warp.visible_mask), ErrorKind::EditOutOfFrame, "the edited object leaves the frame");

  out.composite = warp::composite_over(out.warp, session.background);
  out.inpaint_mask = mask::subtract(mask::unite(out.warp.ambiguous_mask, stretched), out.warp.visible_mask);
  if (mask::any(out.inpaint_mask)) {
    oracle::InpaintRequest request{out.composite, out.inpaint_mask, synth_depth_hint(session.background_depth, out.warp),
                                   session.prompt, seed};
    out.view = oracle.inpaint(request);
    require(out.view.same_shape(out.composite), ErrorKind::OracleRequest, "oracle inpaint returned the wrong size");
  } else {
    out.view = out.composite;
  }
  return out;
}

nlohmann::json trace_summary(const IterationTrace &t) {
  json j = {{"iteration", t.index},
            {"sigma", t.sigma},
            {"warp_pairs", t.stats.warp_pairs},
            {"composed_pairs", t.stats.composed_pairs},
            {"mean_pair_confidence", t.stats.mean_confidence},
            {"visible_pixels", mask::count(t.visible_mask)},
            {"inpainted_pixels", mask::count(t.inpaint_mask)},
            {"alignment_skipped", !t.solver.has_value()},
            {"warning", t.warning}};
  json m;
  metrics::to_json(m, t.metrics);
  j["metrics"] = m;
  if (t.solver) {
    const align::SolverReport &r = *t.solver;
    j["solver"] = {{"initial_cost", r.initial_cost},
                   {"final_cost", r.final_cost()},
                   {"initial_rmse", r.initial_rmse},
                   {"final_rmse", r.final_rmse()},
                   {"iterations", r.iterations.size()},
                   {"termination", std::string(align::to_string(r.termination))},
                   {"pairs_used", r.pairs_used},
                   {"pairs_dropped", r.pairs_dropped},
                   {"pairs_flagged", r.pairs_flagged}};
  } else {
    j["solver"] = nullptr;
  }
  return j;
}

EditResult run_edit(EditSession &session, oracle::Oracle &oracle, const EditConfig &config, const TraceSink &sink) {
  config.validate();
  prepare(session, oracle, config);
  EditResult result;
  for (int k = 0; k < config.iterations; ++k) {
    IterationTrace t;
    t.index = k;
    t.sigma = config.sigma_schedule[static_cast<std::size_t>(k)];
    t.depth_pre = session.depth;

    SynthResult synth = synth_view(session, oracle, config, config.seed + 2 * static_cast<std::uint64_t>(k) + 1);
    t.warped = std::move(synth.composite);
    t.synthesized = synth.view;
    t.visible_mask = synth.warp.visible_mask;
    t.inpaint_mask = synth.inpaint_mask;

    oracle::UndistortRequest request{synth.view,
                                     t.sigma,
                                     mask::unite(t.visible_mask, t.inpaint_mask),
                                     session.id,
                                     session.adaptation,
                                     config.seed + 2 * static_cast<std::uint64_t>(k) + 2};
    t.undistorted = oracle.undistort(request);
    require(t.undistorted.same_shape(session.source), ErrorKind::OracleRequest,
            "oracle undistort returned the wrong size");

    // I -> Jhat from the warp, Jhat -> J from the matcher.
    t.warp_pairs = warp::export_correspondences(synth.warp, config.correspondence_stride);
    t.stats.warp_pairs = t.warp_pairs.size();
    const oracle::MatchResult match = oracle.match_dense(synth.view, t.undistorted);
    match.validate(session.source.width(), session.source.height());
    const Mask near_visible = mask::dilate(t.visible_mask, kMatchSnapRadius);
    align::CorrespondenceSet match_pairs;
    const int w = session.source.width();
    const int h = session.source.height();
    for (int v = 0; v < h; ++v) {
      for (int u = 0; u < w; ++u) {
        const double c = match.confidence(u, v);
        if (!near_visible(u, v) || c <= 0.0) {
          continue;
        }
        const geom::Vec2 target = geom::Vec2(u, v) + match.flow(u, v);
        if (target.allFinite() && target.x() >= 0.0 && target.y() >= 0.0 && target.x() <= w - 1 &&
            target.y() <= h - 1) {
          match_pairs.pairs.push_back({geom::Vec2(u, v), target, c});
        }
      }
    }

    try {
      t.correspondences = align::compose_correspondences(t.warp_pairs, match_pairs, config.solver.confidence_floor);
      t.stats.composed_pairs = t.correspondences.size();
      double sum = 0.0;
      for (const auto &p : t.correspondences.pairs) {
        sum += p.confidence;
      }
      t.stats.mean_confidence = t.correspondences.empty() ? 0.0 : sum / static_cast<double>(t.correspondences.size());
      align::SolveResult solved = align::solve_depth(session.initial_depth, session.transform, t.correspondences,
                                                     session.selection, config.solver, &session.depth);
      session.depth = std::move(solved.depth);
      t.solver = std::move(solved.report);
    } catch (const Error &e) {
      if (e.kind() != ErrorKind::InsufficientCorrespondences) {
        throw;
      }
      t.warning = fmt::format("alignment skipped: {}", e.what());
      spdlog::warn("session {} iteration {}: {}", session.id, k, t.warning);
    }
    t.depth_post = session.depth;

    const oracle::MatchResult back = oracle.match_dense(session.source, t.undistorted);
    back.validate(w, h);
    t.metrics = metrics::report(session.source, t.undistorted, back, session.selection, &oracle);

    if (sink) {
      sink(t);
    }
    result.image = t.undistorted;
    result.traces.push_back(std::move(t));
  }
  return result;
}

// ---- session directory ----

void write_inputs(const std::filesystem::path &dir, const EditSession &session) {
  const auto in = dir / "inputs";
  std::filesystem::create_directories(in);
  io::write_image(in / "image.png", session.source);
  io::write_mask(in / "mask.png", session.selection);
  json t;
  geom::to_json(t, session.requested_transform);
  io::write_text(in / "transform.json", t.dump(2));
  json k;
  geom::to_json(k, session.intrinsics);
  io::write_text(in / "intrinsics.json", k.dump(2));
}

EditSession read_inputs(const std::filesystem::path &dir, std::string id) {
  const auto in = dir / "inputs";
  geom::RigidTransform transform;
  geom::CameraIntrinsics k;
  try {
    geom::from_json(json::parse(io::read_text(in / "transform.json")), transform);
    geom::from_json(json::parse(io::read_text(in / "intrinsics.json")), k);
  } catch (const json::exception &e) {
    fail(ErrorKind::InvalidInput, fmt::format("session inputs: {}", e.what()));
  }
  return make_session(std::move(id), io::read_image(in / "image.png"), io::read_mask(in / "mask.png"),
                      std::move(transform), k);
}

void write_prepared(const std::filesystem::path &dir, const EditSession &session) {
  require(session.prepared, ErrorKind::ContractViolation, "write_prepared: session is not prepared");
  const auto p = dir / "prepare";
  std::filesystem::create_directories(p);
  io::write_depth(p / "depth", session.initial_depth);
  io::write_depth(p / "background_depth", session.background_depth);
  io::write_image(p / "background.png", session.background);
  json t;
  geom::to_json(t, session.transform);
  const json state = {{"transform", t}, {"adaptation", session.adaptation}, {"prompt", session.prompt}};
  // Written last: its presence marks the directory complete.
  io::write_text(p / "state.json", state.dump(2));
}

bool read_prepared(const std::filesystem::path &dir, EditSession &session) {
  const auto p = dir / "prepare";
  if (!std::filesystem::exists(p / "state.json")) {
    return false;
  }
  try {
    const json state = json::parse(io::read_text(p / "state.json"));
    geom::from_json(state.at("transform"), session.transform);
    session.prompt = state.value("prompt", std::string());
  } catch (const json::exception &e) {
    fail(ErrorKind::Io, fmt::format("prepare/state.json: {}", e.what()));
  }
  session.initial_depth = io::read_depth(p / "depth");
  session.depth = session.initial_depth;
  session.background_depth = io::read_depth(p / "background_depth");
  session.background = io::read_image(p / "background.png");
  require(session.initial_depth.values.same_shape(session.source) && session.background.same_shape(session.source),
          ErrorKind::Io, "stored prepare artifacts do not match the inputs");
  // Adaptation handles live in the oracle process, so they are re-tuned rather than restored.
  session.adaptation.clear();
  session.prepared = true;
  return true;
}

std::filesystem::path iteration_dir(const std::filesystem::path &dir, int index) {
  return dir / fmt::format("iter_{}", index);
}

void write_trace(const std::filesystem::path &dir, const IterationTrace &trace) {
  const auto d = iteration_dir(dir, trace.index);
  std::filesystem::create_directories(d);
  io::write_image(d / "warped.png", trace.warped);
  io::write_image(d / "synth.png", trace.synthesized);
  io::write_image(d / "undistorted.png", trace.undistorted);
  io::write_mask(d / "visible.png", trace.visible_mask);
  io::write_mask(d / "inpaint.png", trace.inpaint_mask);
  io::write_depth(d / "depth_pre", trace.depth_pre);
  io::write_depth(d / "depth_post", trace.depth_post);
  io::write_text(d / "correspondences.csv", align::to_csv(trace.correspondences));
  io::write_text(d / "warp_pairs.csv", align::to_csv(trace.warp_pairs));
  io::write_text(d / "metrics.json", trace_summary(trace).dump(2));
}

// ---- call recording ----

void to_json(json &j, const CallRecord &r) {
  j = {{"operation", r.operation}, {"ms", r.milliseconds}, {"ok", r.ok}};
  if (!r.ok) {
    j["error"] = r.error;
  }
}

template <typename F> auto RecordingOracle::record(const char *operation, F &&f) -> decltype(f()) {
  const auto start = std::chrono::steady_clock::now();
  CallRecord rec{operation, 0.0, true, {}};
  auto finish = [&] {
    rec.milliseconds = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const std::lock_guard lock(mutex_);
    calls_.push_back(rec);
  };
  try {
    auto out = f();
    finish();
    return out;
  } catch (const std::exception &e) {
    rec.ok = false;
    const auto *err = dynamic_cast<const Error *>(&e);
    rec.error = err != nullptr ? fmt::format("{}: {}", to_string(err->kind()), e.what()) : e.what();
    finish();
    throw;
  }
}

oracle::CapabilitySet RecordingOracle::capabilities() const { return inner_.capabilities(); }

Grid<double> RecordingOracle::estimate_depth(const Image &image) {
  return record("estimate_depth", [&] { return inner_.estimate_depth(image); });
}
Image RecordingOracle::inpaint(const oracle::InpaintRequest &request) {
  return record("inpaint", [&] { return inner_.inpaint(request); });
}
Image RecordingOracle::undistort(const oracle::UndistortRequest &request) {
  return record("undistort", [&] { return inner_.undistort(request); });
}
oracle::MatchResult RecordingOracle::match_dense(const Image &a, const Image &b) {
  return record("match_dense", [&] { return inner_.match_dense(a, b); });
}
std::string RecordingOracle::caption(const Image &image) {
  return record("caption", [&] { return inner_.caption(image); });
}
std::string RecordingOracle::tune_adaptation(const Image &image, const std::string &session_id) {
  return record("tune_adaptation", [&] { return inner_.tune_adaptation(image, session_id); });
}
std::vector<double> RecordingOracle::embed(const Image &image) {
  return record("embed", [&] { return inner_.embed(image); });
}

std::vector<CallRecord> RecordingOracle::calls() const {
  const std::lock_guard lock(mutex_);
  return calls_;
}

} // namespace edit3d::pipeline
