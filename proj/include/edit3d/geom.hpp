#pragma once

#include <edit3d/grid.hpp>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include <optional>

namespace edit3d::geom {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Pinhole intrinsics. Camera frame is right-handed with +z into the scene,
/// image origin top-left and pixel centres at integer coordinates.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  static constexpr double kDefaultVerticalFovDeg = 55.0;

  /// Square pixels, principal point at the image centre.
  static CameraIntrinsics from_vertical_fov(int width, int height, double vfov_deg = kDefaultVerticalFovDeg);

  /// Throws InvalidInput when the invariants do not hold.
  void validate() const;

  [[nodiscard]] Mat3 matrix() const;
  bool operator==(const CameraIntrinsics &) const = default;
};

/// Similarity edit about a pivot: p -> R * (s * (p - pivot)) + pivot + t.
/// An empty pivot stands for "object-centroid" and must be resolved before use.
class RigidTransform {
public:
  RigidTransform() = default;
  RigidTransform(const Quat &rotation, const Vec3 &translation, std::optional<Vec3> pivot, double scale = 1.0);

  static RigidTransform identity() { return RigidTransform(); }
  static RigidTransform about_axis(const Vec3 &axis, double angle_rad, const Vec3 &pivot);

  [[nodiscard]] const Quat &rotation() const noexcept { return rotation_; }
  [[nodiscard]] const Vec3 &translation() const noexcept { return translation_; }
  [[nodiscard]] const std::optional<Vec3> &pivot() const noexcept { return pivot_; }
  [[nodiscard]] double scale() const noexcept { return scale_; }
  [[nodiscard]] bool pivot_resolved() const noexcept { return pivot_.has_value(); }

  /// Copy with the symbolic object-centroid pivot replaced by `centroid`.
  /// Already-resolved pivots are kept.
  [[nodiscard]] RigidTransform resolved(const Vec3 &centroid) const;

  /// s*R; throws ContractViolation when the pivot is unresolved.
  [[nodiscard]] Mat3 linear() const;
  /// Offset o such that apply(p) = linear()*p + o.
  [[nodiscard]] Vec3 offset() const;

  [[nodiscard]] Vec3 apply(const Vec3 &p) const;
  [[nodiscard]] RigidTransform inverse() const;
  /// Composition: (a * b).apply(p) == a.apply(b.apply(p)).
  friend RigidTransform operator*(const RigidTransform &a, const RigidTransform &b);

  [[nodiscard]] bool is_identity(double tol = 1e-12) const;

private:
  void require_pivot() const;

  Quat rotation_ = Quat::Identity();
  Vec3 translation_ = Vec3::Zero();
  std::optional<Vec3> pivot_ = Vec3::Zero();
  double scale_ = 1.0;
};

/// Metric depth per pixel; NaN marks invalid entries.
struct DepthMap {
  Grid<double> values;
  CameraIntrinsics intrinsics;

  DepthMap() = default;
  DepthMap(Grid<double> v, const CameraIntrinsics &k);
  DepthMap(const CameraIntrinsics &k, double fill);

  [[nodiscard]] int width() const noexcept { return values.width(); }
  [[nodiscard]] int height() const noexcept { return values.height(); }
  [[nodiscard]] bool valid(int u, int v) const noexcept;
  double &operator()(int u, int v) noexcept { return values(u, v); }
  double operator()(int u, int v) const noexcept { return values(u, v); }
};

/// Reciprocal depth (1/m); NaN marks invalid entries.
struct DisparityMap {
  Grid<double> values;

  [[nodiscard]] int width() const noexcept { return values.width(); }
  [[nodiscard]] int height() const noexcept { return values.height(); }
  double &operator()(int u, int v) noexcept { return values(u, v); }
  double operator()(int u, int v) const noexcept { return values(u, v); }
};

inline constexpr double kDefaultMaxDisparity = 1.0e3;

[[nodiscard]] Vec3 unproject(const Vec2 &pixel, double depth, const CameraIntrinsics &k);
[[nodiscard]] Vec2 project(const Vec3 &point, const CameraIntrinsics &k);
[[nodiscard]] inline Vec3 apply_transform(const RigidTransform &t, const Vec3 &p) { return t.apply(p); }

[[nodiscard]] DisparityMap depth_to_disparity(const DepthMap &depth, double max_disparity = kDefaultMaxDisparity);
[[nodiscard]] DepthMap disparity_to_depth(const DisparityMap &disparity, const CameraIntrinsics &k,
                                          double max_disparity = kDefaultMaxDisparity);

/// Mean of the unprojected valid depth samples under `selection`.
[[nodiscard]] Vec3 selection_centroid(const DepthMap &depth, const Mask &selection);

void to_json(nlohmann::json &j, const CameraIntrinsics &k);
void from_json(const nlohmann::json &j, CameraIntrinsics &k);
void to_json(nlohmann::json &j, const RigidTransform &t);
void from_json(const nlohmann::json &j, RigidTransform &t);

} // namespace edit3d::geom
