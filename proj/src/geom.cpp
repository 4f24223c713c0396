#include <edit3d/geom.hpp>

#include <cmath>
#include <numbers>
#include <string>

namespace edit3d::geom {

CameraIntrinsics CameraIntrinsics::from_vertical_fov(int width, int height, double vfov_deg) {
  require(width > 0 && height > 0, ErrorKind::InvalidInput, "intrinsics: image size must be positive");
  require(vfov_deg > 0.0 && vfov_deg < 180.0, ErrorKind::InvalidInput, "intrinsics: field of view out of range");
  const double f = 0.5 * height / std::tan(0.5 * vfov_deg * std::numbers::pi / 180.0);
  return {f, f, 0.5 * (width - 1), 0.5 * (height - 1), width, height};
}

void CameraIntrinsics::validate() const {
  require(std::isfinite(fx) && std::isfinite(fy) && fx > 0.0 && fy > 0.0, ErrorKind::InvalidInput,
          "intrinsics: focal lengths must be positive");
  require(width > 0 && height > 0, ErrorKind::InvalidInput, "intrinsics: image size must be positive");
  require(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height, ErrorKind::InvalidInput,
          "intrinsics: principal point outside the image");
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

RigidTransform::RigidTransform(const Quat &rotation, const Vec3 &translation, std::optional<Vec3> pivot, double scale)
    : translation_(translation), pivot_(std::move(pivot)), scale_(scale) {
  const double n = rotation.norm();
  require(std::isfinite(n) && n > 1e-12, ErrorKind::InvalidInput, "transform: rotation quaternion is degenerate");
  require(std::isfinite(scale) && scale > 0.0, ErrorKind::InvalidInput, "transform: scale must be positive");
  require(translation.allFinite(), ErrorKind::InvalidInput, "transform: translation must be finite");
  require(!pivot_ || pivot_->allFinite(), ErrorKind::InvalidInput, "transform: pivot must be finite");
  rotation_ = rotation.normalized();
}

RigidTransform RigidTransform::about_axis(const Vec3 &axis, double angle_rad, const Vec3 &pivot) {
  return {Quat(Eigen::AngleAxisd(angle_rad, axis.normalized())), Vec3::Zero(), pivot, 1.0};
}

RigidTransform RigidTransform::resolved(const Vec3 &centroid) const {
  RigidTransform out = *this;
  if (!out.pivot_) {
    out.pivot_ = centroid;
  }
  return out;
}

void RigidTransform::require_pivot() const {
  require(pivot_.has_value(), ErrorKind::ContractViolation,
          "transform: object-centroid pivot must be resolved before use");
}

Mat3 RigidTransform::linear() const {
  require_pivot();
  return scale_ * rotation_.toRotationMatrix();
}

Vec3 RigidTransform::offset() const {
  const Mat3 a = linear();
  return *pivot_ + translation_ - a * *pivot_;
}

Vec3 RigidTransform::apply(const Vec3 &p) const {
  require_pivot();
  return rotation_ * (scale_ * (p - *pivot_)) + *pivot_ + translation_;
}

RigidTransform RigidTransform::inverse() const {
  require_pivot();
  // Pivot the inverse about the moved pivot so it undoes the translation first.
  return {rotation_.conjugate(), -translation_, *pivot_ + translation_, 1.0 / scale_};
}

RigidTransform operator*(const RigidTransform &a, const RigidTransform &b) {
  a.require_pivot();
  b.require_pivot();
  const Vec3 &pa = *a.pivot_;
  const Vec3 &pb = *b.pivot_;
  const Vec3 t = a.scale_ * (a.rotation_ * (pb + b.translation_ - pa)) + pa + a.translation_ - pb;
  return {a.rotation_ * b.rotation_, t, pb, a.scale_ * b.scale_};
}

bool RigidTransform::is_identity(double tol) const {
  return rotation_.angularDistance(Quat::Identity()) <= tol && translation_.norm() <= tol &&
         std::abs(scale_ - 1.0) <= tol;
}

DepthMap::DepthMap(Grid<double> v, const CameraIntrinsics &k) : values(std::move(v)), intrinsics(k) {
  require(values.width() == k.width && values.height() == k.height, ErrorKind::InvalidInput,
          "depth map dimensions do not match intrinsics");
}

DepthMap::DepthMap(const CameraIntrinsics &k, double fill) : values(k.width, k.height, fill), intrinsics(k) {}

bool DepthMap::valid(int u, int v) const noexcept {
  const double z = values(u, v);
  return std::isfinite(z) && z > 0.0;
}

Vec3 unproject(const Vec2 &pixel, double depth, const CameraIntrinsics &k) {
  require(std::isfinite(depth) && depth > 0.0, ErrorKind::InvalidInput,
          "unproject: depth must be positive and finite");
  return {(pixel.x() - k.cx) * depth / k.fx, (pixel.y() - k.cy) * depth / k.fy, depth};
}

Vec2 project(const Vec3 &point, const CameraIntrinsics &k) {
  if (!(point.z() > 0.0)) {
    fail(ErrorKind::BehindCamera, "project: point is behind the camera");
  }
  return {k.fx * point.x() / point.z() + k.cx, k.fy * point.y() / point.z() + k.cy};
}

DisparityMap depth_to_disparity(const DepthMap &depth, double max_disparity) {
  DisparityMap out{Grid<double>(depth.width(), depth.height())};
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    const double z = depth.values[i];
    if (!std::isfinite(z) || z <= 0.0) {
      out.values[i] = std::numeric_limits<double>::quiet_NaN();
    } else {
      out.values[i] = z < 1.0 / max_disparity ? max_disparity : 1.0 / z;
    }
  }
  return out;
}

DepthMap disparity_to_depth(const DisparityMap &disparity, const CameraIntrinsics &k, double max_disparity) {
  DepthMap out(Grid<double>(disparity.width(), disparity.height()), k);
  for (std::size_t i = 0; i < disparity.values.size(); ++i) {
    const double d = disparity.values[i];
    if (!std::isfinite(d) || d <= 0.0) {
      out.values[i] = std::numeric_limits<double>::quiet_NaN();
    } else {
      out.values[i] = 1.0 / std::min(d, max_disparity);
    }
  }
  return out;
}

Vec3 selection_centroid(const DepthMap &depth, const Mask &selection) {
  require(depth.values.same_shape(selection), ErrorKind::InvalidInput, "centroid: mask/depth size mismatch");
  Vec3 sum = Vec3::Zero();
  std::size_t n = 0;
  for (int v = 0; v < depth.height(); ++v) {
    for (int u = 0; u < depth.width(); ++u) {
      if (selection(u, v) != 0 && depth.valid(u, v)) {
        sum += unproject({u, v}, depth(u, v), depth.intrinsics);
        ++n;
      }
    }
  }
  require(n > 0, ErrorKind::EmptySelection, "centroid: selection has no valid depth");
  return sum / static_cast<double>(n);
}

void to_json(nlohmann::json &j, const CameraIntrinsics &k) {
  j = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

void from_json(const nlohmann::json &j, CameraIntrinsics &k) {
  try {
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::InvalidInput, std::string("intrinsics JSON: ") + e.what());
  }
  k.validate();
}

void to_json(nlohmann::json &j, const RigidTransform &t) {
  const Quat &q = t.rotation();
  j = nlohmann::json::object();
  j["rotation"] = {q.w(), q.x(), q.y(), q.z()};
  j["translation"] = {t.translation().x(), t.translation().y(), t.translation().z()};
  if (t.pivot()) {
    j["pivot"] = {t.pivot()->x(), t.pivot()->y(), t.pivot()->z()};
  } else {
    j["pivot"] = "object-centroid";
  }
  j["scale"] = t.scale();
}

void from_json(const nlohmann::json &j, RigidTransform &t) {
  try {
    require(j.is_object(), ErrorKind::InvalidInput, "transform JSON must be an object");
    Quat q = Quat::Identity();
    if (j.contains("rotation")) {
      const auto r = j.at("rotation").get<std::vector<double>>();
      require(r.size() == 4, ErrorKind::InvalidInput, "transform JSON: rotation must be [w,x,y,z]");
      q = Quat(r[0], r[1], r[2], r[3]);
    }
    Vec3 translation = Vec3::Zero();
    if (j.contains("translation")) {
      const auto v = j.at("translation").get<std::vector<double>>();
      require(v.size() == 3, ErrorKind::InvalidInput, "transform JSON: translation must be [x,y,z]");
      translation = {v[0], v[1], v[2]};
    }
    std::optional<Vec3> pivot;
    if (j.contains("pivot")) {
      const auto &p = j.at("pivot");
      if (p.is_string()) {
        require(p.get<std::string>() == "object-centroid", ErrorKind::InvalidInput,
                "transform JSON: pivot string must be \"object-centroid\"");
      } else {
        const auto v = p.get<std::vector<double>>();
        require(v.size() == 3, ErrorKind::InvalidInput, "transform JSON: pivot must be [x,y,z]");
        pivot = Vec3(v[0], v[1], v[2]);
      }
    }
    const double scale = j.value("scale", 1.0);
    t = RigidTransform(q, translation, pivot, scale);
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::InvalidInput, std::string("transform JSON: ") + e.what());
  }
}

} // namespace edit3d::geom
