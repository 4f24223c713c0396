#pragma once

#include <edit3d/align.hpp>
#include <edit3d/bginpaint.hpp>
#include <edit3d/metrics.hpp>
#include <edit3d/oracle.hpp>
#include <edit3d/warp.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace edit3d::pipeline {

struct EditConfig {
  int iterations = 3;
  std::vector<double> sigma_schedule{0.5, 0.4, 0.3};
  double stretch_threshold = warp::kDefaultStretchThreshold;
  int correspondence_stride = 2;
  align::SolverConfig solver;
  warp::MeshConfig mesh;
  warp::RasterConfig raster;
  bginpaint::BackgroundOptions background;
  /// "mock:identity", "mock:<scene.json>" or "http://host:port".
  std::string oracle = "mock:identity";
  std::uint64_t seed = 0;
  /// Inpaint prompt; the oracle caption is used when empty and captioning is available.
  std::string prompt;

  /// Throws InvalidConfig.
  void validate() const;
};

void to_json(nlohmann::json &j, const EditConfig &c);
/// Missing keys keep their defaults. An explicit schedule without "iterations" sets it.
void from_json(const nlohmann::json &j, EditConfig &c);

/// Parses "0.5,0.4,0.3".
[[nodiscard]] std::vector<double> parse_schedule(std::string_view text);

struct EditSession {
  std::string id;
  Image source;
  Mask selection;
  /// As requested; the pivot may still be the symbolic object centroid.
  geom::RigidTransform requested_transform;
  geom::CameraIntrinsics intrinsics;

  // Filled by prepare().
  bool prepared = false;
  geom::RigidTransform transform; // pivot resolved
  geom::DepthMap initial_depth;   // D0, the regularisation reference
  geom::DepthMap depth;           // current D
  geom::DepthMap background_depth;
  Image background;
  std::string adaptation;
  std::string prompt;

  /// Throws InvalidInput / EmptySelection.
  void validate() const;
};

/// Intrinsics default to the 55 degree vertical field of view.
[[nodiscard]] EditSession make_session(std::string id, Image source, Mask selection, geom::RigidTransform transform,
                                       std::optional<geom::CameraIntrinsics> intrinsics = std::nullopt);

inline const oracle::CapabilitySet kRequiredCapabilities{oracle::Capability::EstimateDepth,
                                                         oracle::Capability::InpaintImage,
                                                         oracle::Capability::Undistort,
                                                         oracle::Capability::DenseMatch,
                                                         oracle::Capability::TuneLora};

/// Depth, pivot, adaptation and the completed background layer. No-op once prepared.
void prepare(EditSession &session, oracle::Oracle &oracle, const EditConfig &config);

struct SynthResult {
  Image composite; // warped foreground over the background layer, before inpainting
  Image view;      // composite with the uncertain pixels inpainted
  Mask inpaint_mask;
  warp::WarpResult warp;
};

/// Throws EditOutOfFrame when no object pixel lands in the frame.
[[nodiscard]] SynthResult synth_view(const EditSession &session, oracle::Oracle &oracle, const EditConfig &config,
                                     std::uint64_t seed = 0);

struct CorrespondenceStats {
  std::size_t warp_pairs = 0;
  std::size_t composed_pairs = 0;
  double mean_confidence = 0.0; // over composed pairs
};

struct IterationTrace {
  int index = 0;
  double sigma = 0.0;
  Image warped;      // before inpainting
  Image synthesized; // after inpainting
  Image undistorted;
  Mask visible_mask;
  Mask inpaint_mask;
  geom::DepthMap depth_pre;
  geom::DepthMap depth_post;
  align::CorrespondenceSet warp_pairs; // I -> synthesized, from the current depth
  align::CorrespondenceSet correspondences; // I -> undistorted, fed to the solver
  CorrespondenceStats stats;
  std::optional<align::SolverReport> solver;
  std::string warning; // set when alignment was skipped
  metrics::ConsistencyReport metrics;
};

[[nodiscard]] nlohmann::json trace_summary(const IterationTrace &trace);

using TraceSink = std::function<void(const IterationTrace &)>;

struct EditResult {
  Image image;
  std::vector<IterationTrace> traces;
};

/// Runs config.iterations rounds of synthesis, undistortion and shape alignment. `sink` sees
/// each trace before the next round starts; if it throws, the run stops there.
EditResult run_edit(EditSession &session, oracle::Oracle &oracle, const EditConfig &config,
                    const TraceSink &sink = {});

// Session directory layout.

/// inputs/{image.png, mask.png, transform.json, intrinsics.json}
void write_inputs(const std::filesystem::path &dir, const EditSession &session);
[[nodiscard]] EditSession read_inputs(const std::filesystem::path &dir, std::string id);

/// prepare/{depth, background_depth, background.png, state.json}
void write_prepared(const std::filesystem::path &dir, const EditSession &session);
/// Restores the prepare() state if it was persisted; returns false otherwise.
bool read_prepared(const std::filesystem::path &dir, EditSession &session);

/// iter_k/{warped.png, synth.png, undistorted.png, depth_pre, depth_post, correspondences.csv,
/// warp_pairs.csv, metrics.json}
void write_trace(const std::filesystem::path &dir, const IterationTrace &trace);
[[nodiscard]] std::filesystem::path iteration_dir(const std::filesystem::path &dir, int index);

struct CallRecord {
  std::string operation;
  double milliseconds = 0.0;
  bool ok = true;
  std::string error;
};

void to_json(nlohmann::json &j, const CallRecord &r);

/// Forwards to another oracle and records every call.
class RecordingOracle final : public oracle::Oracle {
public:
  explicit RecordingOracle(oracle::Oracle &inner) : inner_(inner) {}

  [[nodiscard]] std::string name() const override { return inner_.name(); }
  [[nodiscard]] oracle::CapabilitySet capabilities() const override;

  Grid<double> estimate_depth(const Image &image) override;
  Image inpaint(const oracle::InpaintRequest &request) override;
  Image undistort(const oracle::UndistortRequest &request) override;
  oracle::MatchResult match_dense(const Image &a, const Image &b) override;
  std::string caption(const Image &image) override;
  std::string tune_adaptation(const Image &image, const std::string &session_id) override;
  std::vector<double> embed(const Image &image) override;

  [[nodiscard]] std::vector<CallRecord> calls() const;

private:
  template <typename F> auto record(const char *operation, F &&f) -> decltype(f());

  oracle::Oracle &inner_;
  mutable std::mutex mutex_;
  std::vector<CallRecord> calls_;
};

} // namespace edit3d::pipeline
