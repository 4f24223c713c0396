#pragma once

#include <edit3d/oracle.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <mutex>
#include <set>

namespace edit3d::oracle {

/// Degenerate but well-defined behaviour for plumbing tests.
class IdentityMock final : public Oracle {
public:
  [[nodiscard]] std::string name() const override { return "identity-mock"; }
  [[nodiscard]] CapabilitySet capabilities() const override;

  Grid<double> estimate_depth(const Image &image) override; // constant 2 m
  Image inpaint(const InpaintRequest &request) override;    // nearest known pixel
  Image undistort(const UndistortRequest &request) override; // identity
  MatchResult match_dense(const Image &a, const Image &b) override; // zero flow, confidence 1
  std::string caption(const Image &image) override;
  std::string tune_adaptation(const Image &image, const std::string &session_id) override;
  std::vector<double> embed(const Image &image) override;
};

/// Fills every hole pixel with the colour of the nearest (Euclidean, ties by scan order) known pixel.
[[nodiscard]] Image fill_nearest(const Image &image, const Mask &hole);

namespace scene {

/// Infinite plane {X : normal . X = offset} with a two-tone checker texture.
/// Blue channels stay below 0.45 so no plane pixel decodes as an object code.
struct Plane {
  geom::Vec3 normal = geom::Vec3::UnitZ();
  double offset = 4.0;
  Rgb base{0.30F, 0.25F, 0.20F};
  Rgb stripe{0.15F, 0.35F, 0.30F};
  double period = 0.25; // metres
};

/// Textured box (six faces) or a single quad in its local z = 0 plane.
struct Object {
  enum class Kind { Box, Quad };
  Kind kind = Kind::Box;
  geom::Vec3 center{0.0, 0.0, 2.0};
  geom::Vec3 half_size{0.25, 0.25, 0.25};
  geom::Quat orientation = geom::Quat::Identity();
};

struct Config {
  geom::CameraIntrinsics camera = geom::CameraIntrinsics::from_vertical_fov(256, 256);
  std::vector<Plane> planes;
  Object object;
  /// Ground-truth edit; an "object-centroid" pivot resolves to the mean visible object point.
  geom::RigidTransform edit;
  /// Estimated depth on object pixels = truth * depth_scale + depth_offset.
  double depth_scale = 1.0;
  double depth_offset = 0.0;
  /// Depth and colour of rays that hit nothing.
  double far = 50.0;
  Rgb sky{0.05F, 0.05F, 0.10F};

  void validate() const;
};

void from_json(const nlohmann::json &j, Config &c);
void to_json(nlohmann::json &j, const Config &c);
[[nodiscard]] Config load(const std::filesystem::path &path);

struct Render {
  Image image;
  Grid<double> depth; // `far` where no surface is hit
  Mask object_mask;
};

/// Ray-cast at pixel centres. `object_pose` moves the object; nullopt leaves it out.
[[nodiscard]] Render render(const Config &config, const std::optional<geom::RigidTransform> &object_pose);

/// Object texture: R and G carry the face coordinates, B the face index.
[[nodiscard]] Rgb object_code(int face, double s, double t);
struct Code {
  int face;
  double s;
  double t;
};
/// Inverse of object_code; nullopt for background or mixed pixels.
[[nodiscard]] std::optional<Code> decode(const Rgb &c);

} // namespace scene

/// Renders a configured scene: ground truth depth, novel views and flow for closed-loop tests.
class MockSceneOracle final : public Oracle {
public:
  explicit MockSceneOracle(scene::Config config);

  [[nodiscard]] std::string name() const override { return "mock-scene"; }
  [[nodiscard]] CapabilitySet capabilities() const override;

  Grid<double> estimate_depth(const Image &image) override;
  Image inpaint(const InpaintRequest &request) override;
  Image undistort(const UndistortRequest &request) override;
  MatchResult match_dense(const Image &a, const Image &b) override;
  std::string caption(const Image &image) override;
  std::string tune_adaptation(const Image &image, const std::string &session_id) override;
  std::vector<double> embed(const Image &image) override;

  [[nodiscard]] const scene::Config &config() const noexcept { return config_; }
  /// Edit with its pivot resolved.
  [[nodiscard]] const geom::RigidTransform &edit() const noexcept { return edit_; }
  [[nodiscard]] const scene::Render &source() const noexcept { return source_; }
  [[nodiscard]] const scene::Render &edited() const noexcept { return edited_; }
  [[nodiscard]] const scene::Render &background() const noexcept { return background_; }
  /// Where the object point seen at source pixel `p` lands after the edit (ground truth).
  [[nodiscard]] std::optional<geom::Vec2> true_target(const geom::Vec2 &p) const;

private:
  void require_size(const Image &image) const;

  scene::Config config_;
  geom::RigidTransform edit_;
  scene::Render source_;
  scene::Render edited_;
  scene::Render background_;
  mutable std::mutex mutex_;
  std::set<std::string> handles_;
};

/// Codes are searched globally in `b`, then refined to sub-pixel with the local code gradient.
/// Pixels without a decodable code in both images get confidence 0.
[[nodiscard]] MatchResult match_codes(const Image &a, const Image &b);

} // namespace edit3d::oracle
