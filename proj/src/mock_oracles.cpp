#include <edit3d/mock_oracles.hpp>

#include <edit3d/io.hpp>

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <unordered_map>

namespace edit3d::oracle {

using geom::Vec2;
using geom::Vec3;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const CapabilitySet kAll{Capability::EstimateDepth, Capability::InpaintImage, Capability::Undistort,
                         Capability::DenseMatch,    Capability::Caption,      Capability::TuneLora,
                         Capability::Embed};

} // namespace

// ---------------------------------------------------------------------------------------------
// identity mock

CapabilitySet IdentityMock::capabilities() const { return kAll; }

Grid<double> IdentityMock::estimate_depth(const Image &image) {
  require(!image.empty(), ErrorKind::InvalidInput, "estimate_depth: empty image");
  return Grid<double>(image.width(), image.height(), 2.0);
}

Image IdentityMock::inpaint(const InpaintRequest &request) {
  request.validate();
  return fill_nearest(request.image, request.hole);
}

Image IdentityMock::undistort(const UndistortRequest &request) {
  request.validate();
  return request.image;
}

MatchResult IdentityMock::match_dense(const Image &a, const Image &b) {
  require(a.same_shape(b) && !a.empty(), ErrorKind::InvalidInput, "match_dense: image sizes differ");
  return {Grid<Vec2>(a.width(), a.height(), Vec2::Zero()), Grid<double>(a.width(), a.height(), 1.0)};
}

std::string IdentityMock::caption(const Image &image) {
  require(!image.empty(), ErrorKind::InvalidInput, "caption: empty image");
  return "an image";
}

std::string IdentityMock::tune_adaptation(const Image &image, const std::string &) {
  require(!image.empty(), ErrorKind::InvalidInput, "tune_adaptation: empty image");
  return "identity-adaptation";
}

std::vector<double> IdentityMock::embed(const Image &image) { return luminance_embedding(image); }

// Exact Euclidean nearest-known-pixel fill: a column pass, then a lower envelope of parabolas
// per row (Felzenszwalb & Huttenlocher) carrying the source index along.
Image fill_nearest(const Image &image, const Mask &hole) {
  require(hole.same_shape(image), ErrorKind::InvalidInput, "fill_nearest: hole does not match the image");
  if (!mask::any(hole)) {
    return image;
  }
  require(mask::count(hole) < hole.size(), ErrorKind::Degenerate, "fill_nearest: nothing known to copy");
  const int w = image.width();
  const int h = image.height();

  // Column pass: squared vertical distance to the nearest known pixel in the same column.
  Grid<double> f(w, h, kInf);
  Grid<int> row_of(w, h, -1);
  for (int u = 0; u < w; ++u) {
    int last = -1;
    for (int v = 0; v < h; ++v) {
      if (!hole(u, v)) {
        last = v;
      }
      if (last >= 0) {
        row_of(u, v) = last;
      }
    }
    int next = -1;
    for (int v = h - 1; v >= 0; --v) {
      if (!hole(u, v)) {
        next = v;
      }
      int best = row_of(u, v);
      if (next >= 0 && (best < 0 || next - v < v - best)) {
        best = next;
      }
      row_of(u, v) = best;
      if (best >= 0) {
        f(u, v) = static_cast<double>((v - best) * (v - best));
      }
    }
  }

  Image out = image;
  std::vector<int> hull(static_cast<std::size_t>(w));
  std::vector<double> z(static_cast<std::size_t>(w) + 1);
  for (int v = 0; v < h; ++v) {
    int k = -1;
    for (int q = 0; q < w; ++q) {
      if (!std::isfinite(f(q, v))) {
        continue;
      }
      double s = -kInf;
      while (k >= 0) {
        const int p = hull[static_cast<std::size_t>(k)];
        s = ((f(q, v) + q * q) - (f(p, v) + p * p)) / (2.0 * (q - p));
        if (s > z[static_cast<std::size_t>(k)]) {
          break;
        }
        --k;
      }
      ++k;
      hull[static_cast<std::size_t>(k)] = q;
      z[static_cast<std::size_t>(k)] = k == 0 ? -kInf : s;
      z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    if (k < 0) {
      continue; // unreachable: some column has a known pixel
    }
    int j = 0;
    for (int u = 0; u < w; ++u) {
      while (z[static_cast<std::size_t>(j) + 1] < u) {
        ++j;
      }
      if (hole(u, v)) {
        const int src_u = hull[static_cast<std::size_t>(j)];
        out(u, v) = image(src_u, row_of(src_u, v));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// scene description

namespace scene {

namespace {

Vec3 vec3(const nlohmann::json &j, const char *what) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == 3, ErrorKind::InvalidConfig, fmt::format("scene: {} must have 3 entries", what));
  return {v[0], v[1], v[2]};
}

Rgb rgb(const nlohmann::json &j, const char *what) {
  const Vec3 v = vec3(j, what);
  return {static_cast<float>(v.x()), static_cast<float>(v.y()), static_cast<float>(v.z())};
}

nlohmann::json arr(const Vec3 &v) { return {v.x(), v.y(), v.z()}; }
nlohmann::json arr(const Rgb &c) { return {c.r, c.g, c.b}; }

constexpr double kCodeBase = 0.5;
constexpr double kCodeStep = 0.08;
constexpr double kCodeTolerance = 2e-3;
constexpr float kMaxBackgroundBlue = 0.45F;

struct Hit {
  double depth = kInf;
  Rgb color;
  bool object = false;
};

/// Orthonormal tangent pair for the checker texture of a plane.
std::pair<Vec3, Vec3> tangents(const Vec3 &n) {
  const Vec3 helper = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 a = n.cross(helper).normalized();
  return {a, n.cross(a)};
}

/// Slab test against the box [-h, h]^3 for the ray o + tau d; returns tau and face code.
bool hit_box(const Vec3 &o, const Vec3 &d, const Vec3 &half, double &tau, int &face, double &s, double &t) {
  double t_near = -kInf;
  double t_far = kInf;
  int axis = -1;
  bool negative_side = false;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (std::abs(o[i]) > half[i]) {
        return false;
      }
      continue;
    }
    double t1 = (-half[i] - o[i]) / d[i];
    double t2 = (half[i] - o[i]) / d[i];
    const bool enters_negative = d[i] > 0.0;
    if (t1 > t2) {
      std::swap(t1, t2);
    }
    if (t1 > t_near) {
      t_near = t1;
      axis = i;
      negative_side = enters_negative;
    }
    t_far = std::min(t_far, t2);
  }
  if (axis < 0 || t_near > t_far || t_near <= 0.0) {
    return false;
  }
  const Vec3 p = o + t_near * d;
  const int a1 = (axis + 1) % 3;
  const int a2 = (axis + 2) % 3;
  tau = t_near;
  face = 2 * axis + (negative_side ? 1 : 0);
  s = std::clamp((p[a1] + half[a1]) / (2.0 * half[a1]), 0.0, 1.0);
  t = std::clamp((p[a2] + half[a2]) / (2.0 * half[a2]), 0.0, 1.0);
  return true;
}

bool hit_quad(const Vec3 &o, const Vec3 &d, const Vec3 &half, double &tau, int &face, double &s, double &t) {
  if (std::abs(d.z()) < 1e-15) {
    return false;
  }
  const double tq = -o.z() / d.z();
  if (tq <= 0.0) {
    return false;
  }
  const Vec3 p = o + tq * d;
  if (std::abs(p.x()) > half.x() || std::abs(p.y()) > half.y()) {
    return false;
  }
  tau = tq;
  face = 4;
  s = (p.x() + half.x()) / (2.0 * half.x());
  t = (p.y() + half.y()) / (2.0 * half.y());
  return true;
}

/// Ray o + tau d in the object's local frame for a given pose.
struct LocalRay {
  geom::Mat3 to_local; // applied to the camera ray direction
  Vec3 origin;
};

LocalRay local_ray(const Object &object, const geom::RigidTransform &pose) {
  const geom::RigidTransform inv = pose.inverse();
  const geom::Mat3 rt = object.orientation.normalized().toRotationMatrix().transpose();
  return {rt * inv.linear(), rt * (inv.offset() - object.center)};
}

bool hit_object(const Object &object, const LocalRay &ray, const Vec3 &dir, double &tau, int &face, double &s,
                double &t) {
  const Vec3 o = ray.origin;
  const Vec3 d = ray.to_local * dir;
  return object.kind == Object::Kind::Box ? hit_box(o, d, object.half_size, tau, face, s, t)
                                          : hit_quad(o, d, object.half_size, tau, face, s, t);
}

Hit trace(const Config &config, const std::optional<LocalRay> &ray, const Vec3 &dir) {
  Hit best;
  for (const Plane &plane : config.planes) {
    const double nd = plane.normal.dot(dir);
    if (std::abs(nd) < 1e-15) {
      continue;
    }
    const double tau = plane.offset / nd;
    if (tau <= 0.0 || tau >= best.depth) {
      continue;
    }
    const Vec3 x = tau * dir;
    const auto [ta, tb] = tangents(plane.normal);
    const auto cell = static_cast<long long>(std::floor(x.dot(ta) / plane.period)) +
                      static_cast<long long>(std::floor(x.dot(tb) / plane.period));
    best = {tau, (cell % 2 == 0) ? plane.base : plane.stripe, false};
  }
  if (ray) {
    double tau = 0.0;
    double s = 0.0;
    double t = 0.0;
    int face = 0;
    if (hit_object(config.object, *ray, dir, tau, face, s, t) && tau < best.depth) {
      best = {tau, object_code(face, s, t), true};
    }
  }
  if (!std::isfinite(best.depth) || best.depth > config.far) {
    best = {config.far, config.sky, false};
  }
  return best;
}

Vec3 pixel_ray(const geom::CameraIntrinsics &k, double u, double v) {
  return {(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
}

} // namespace

void Config::validate() const {
  camera.validate();
  require(object.half_size.minCoeff() > 0.0, ErrorKind::InvalidConfig, "scene: object half sizes must be positive");
  require(std::abs(object.orientation.norm() - 1.0) < 1e-6, ErrorKind::InvalidConfig,
          "scene: object orientation must be a unit quaternion");
  for (const Plane &p : planes) {
    require(std::abs(p.normal.norm() - 1.0) < 1e-6, ErrorKind::InvalidConfig, "scene: plane normals must be unit");
    require(p.period > 0.0, ErrorKind::InvalidConfig, "scene: plane texture period must be positive");
    require(p.base.b < kMaxBackgroundBlue && p.stripe.b < kMaxBackgroundBlue, ErrorKind::InvalidConfig,
            "scene: plane colours need blue < 0.45 to stay apart from object codes");
  }
  require(sky.b < kMaxBackgroundBlue, ErrorKind::InvalidConfig, "scene: sky blue must be < 0.45");
  require(depth_scale > 0.0 && std::isfinite(depth_offset), ErrorKind::InvalidConfig,
          "scene: depth perturbation must keep depth positive");
  require(far > 0.0 && std::isfinite(far), ErrorKind::InvalidConfig, "scene: far must be positive");
}

void from_json(const nlohmann::json &j, Config &c) {
  try {
    const auto &cam = j.at("camera");
    if (cam.contains("fx")) {
      c.camera = cam.get<geom::CameraIntrinsics>();
    } else {
      c.camera = geom::CameraIntrinsics::from_vertical_fov(
          cam.at("width").get<int>(), cam.at("height").get<int>(),
          cam.value("vfov_deg", geom::CameraIntrinsics::kDefaultVerticalFovDeg));
    }
    c.planes.clear();
    for (const auto &pj : j.value("planes", nlohmann::json::array())) {
      Plane p;
      p.normal = vec3(pj.at("normal"), "plane normal").normalized();
      p.offset = pj.at("offset").get<double>();
      if (pj.contains("base")) {
        p.base = rgb(pj.at("base"), "plane base");
      }
      if (pj.contains("stripe")) {
        p.stripe = rgb(pj.at("stripe"), "plane stripe");
      }
      p.period = pj.value("period", p.period);
      c.planes.push_back(p);
    }
    const auto &oj = j.at("object");
    const std::string kind = oj.value("kind", std::string("box"));
    require(kind == "box" || kind == "quad", ErrorKind::InvalidConfig, "scene: object kind must be box or quad");
    c.object.kind = kind == "box" ? Object::Kind::Box : Object::Kind::Quad;
    c.object.center = vec3(oj.at("center"), "object center");
    c.object.half_size = vec3(oj.at("half_size"), "object half_size");
    if (oj.contains("rotation")) {
      const auto q = oj.at("rotation").get<std::vector<double>>();
      require(q.size() == 4, ErrorKind::InvalidConfig, "scene: object rotation must be [w,x,y,z]");
      c.object.orientation = geom::Quat(q[0], q[1], q[2], q[3]);
    }
    c.edit = j.contains("edit") ? j.at("edit").get<geom::RigidTransform>() : geom::RigidTransform::identity();
    if (j.contains("depth_perturbation")) {
      c.depth_scale = j.at("depth_perturbation").value("scale", 1.0);
      c.depth_offset = j.at("depth_perturbation").value("offset", 0.0);
    }
    c.far = j.value("far", c.far);
    if (j.contains("sky")) {
      c.sky = rgb(j.at("sky"), "sky");
    }
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::InvalidConfig, std::string("scene JSON: ") + e.what());
  }
  c.validate();
}

void to_json(nlohmann::json &j, const Config &c) {
  j = nlohmann::json::object();
  j["camera"] = c.camera;
  j["planes"] = nlohmann::json::array();
  for (const Plane &p : c.planes) {
    j["planes"].push_back({{"normal", arr(p.normal)},
                           {"offset", p.offset},
                           {"base", arr(p.base)},
                           {"stripe", arr(p.stripe)},
                           {"period", p.period}});
  }
  const geom::Quat &q = c.object.orientation;
  j["object"] = {{"kind", c.object.kind == Object::Kind::Box ? "box" : "quad"},
                 {"center", arr(c.object.center)},
                 {"half_size", arr(c.object.half_size)},
                 {"rotation", {q.w(), q.x(), q.y(), q.z()}}};
  j["edit"] = c.edit;
  j["depth_perturbation"] = {{"scale", c.depth_scale}, {"offset", c.depth_offset}};
  j["far"] = c.far;
  j["sky"] = arr(c.sky);
}

Config load(const std::filesystem::path &path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::InvalidConfig, fmt::format("scene file {}: {}", path.string(), e.what()));
  }
  return j.get<Config>();
}

Rgb object_code(int face, double s, double t) {
  return {static_cast<float>(0.1 + 0.8 * s), static_cast<float>(0.1 + 0.8 * t),
          static_cast<float>(kCodeBase + kCodeStep * face)};
}

std::optional<Code> decode(const Rgb &c) {
  const double f = (c.b - kCodeBase) / kCodeStep;
  const long face = std::lround(f);
  if (face < 0 || face > 5 || std::abs(c.b - (kCodeBase + kCodeStep * static_cast<double>(face))) > kCodeTolerance) {
    return std::nullopt;
  }
  const double s = (c.r - 0.1) / 0.8;
  const double t = (c.g - 0.1) / 0.8;
  constexpr double slack = 0.01;
  if (s < -slack || s > 1.0 + slack || t < -slack || t > 1.0 + slack) {
    return std::nullopt;
  }
  return Code{static_cast<int>(face), s, t};
}

Render render(const Config &config, const std::optional<geom::RigidTransform> &object_pose) {
  const auto &k = config.camera;
  Render r{Image(k.width, k.height), Grid<double>(k.width, k.height, config.far), Mask(k.width, k.height, 0)};
  std::optional<LocalRay> ray;
  if (object_pose) {
    ray = local_ray(config.object, *object_pose);
  }
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const Hit hit = trace(config, ray, pixel_ray(k, u, v));
      r.image(u, v) = hit.color;
      r.depth(u, v) = hit.depth;
      r.object_mask(u, v) = hit.object ? 1 : 0;
    }
  }
  return r;
}

} // namespace scene

// ---------------------------------------------------------------------------------------------
// dense code matching

namespace {

struct Decoded {
  Grid<int> face;   // -1 where not decodable
  Grid<Vec2> code;  // (s, t)
};

Decoded decode_image(const Image &image) {
  Decoded d{Grid<int>(image.width(), image.height(), -1), Grid<Vec2>(image.width(), image.height(), Vec2::Zero())};
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (const auto c = scene::decode(image[i])) {
      d.face[i] = c->face;
      d.code[i] = {c->s, c->t};
    }
  }
  return d;
}

/// Pixel whose 8 neighbours all decode to its own face: away from face edges and silhouettes.
Mask clean_pixels(const Decoded &d) {
  const int w = d.face.width();
  const int h = d.face.height();
  Mask clean(w, h, 0);
  for (int v = 1; v + 1 < h; ++v) {
    for (int u = 1; u + 1 < w; ++u) {
      const int f = d.face(u, v);
      if (f < 0) {
        continue;
      }
      bool ok = true;
      for (int dv = -1; dv <= 1 && ok; ++dv) {
        for (int du = -1; du <= 1 && ok; ++du) {
          ok = d.face(u + du, v + dv) == f;
        }
      }
      clean(u, v) = ok ? 1 : 0;
    }
  }
  return clean;
}

constexpr int kCells = 128;

struct CodeIndex {
  std::unordered_map<long long, std::vector<int>> cells; // key (face, cs, ct) -> flat pixel indices

  static long long key(int face, int cs, int ct) {
    return (static_cast<long long>(face) * kCells + cs) * kCells + ct;
  }
  static int cell(double x) { return std::clamp(static_cast<int>(std::floor(x * kCells)), 0, kCells - 1); }
};

/// Bilinear (s, t) at a fractional position; false when any tap leaves the clean region.
bool sample_code(const Decoded &d, const Mask &clean, const Vec2 &p, Vec2 &out) {
  const int u0 = static_cast<int>(std::floor(p.x()));
  const int v0 = static_cast<int>(std::floor(p.y()));
  if (!clean.contains(u0, v0) || !clean.contains(u0 + 1, v0 + 1)) {
    return false;
  }
  if (!clean(u0, v0) || !clean(u0 + 1, v0) || !clean(u0, v0 + 1) || !clean(u0 + 1, v0 + 1)) {
    return false;
  }
  const double a = p.x() - u0;
  const double b = p.y() - v0;
  out = (1 - a) * (1 - b) * d.code(u0, v0) + a * (1 - b) * d.code(u0 + 1, v0) + (1 - a) * b * d.code(u0, v0 + 1) +
        a * b * d.code(u0 + 1, v0 + 1);
  return true;
}

} // namespace

MatchResult match_codes(const Image &a, const Image &b) {
  require(a.same_shape(b) && !a.empty(), ErrorKind::InvalidInput, "match_dense: image sizes differ");
  const int w = a.width();
  const int h = a.height();
  MatchResult result{Grid<Vec2>(w, h, Vec2::Zero()), Grid<double>(w, h, 0.0)};

  const Decoded da = decode_image(a);
  const Decoded db = decode_image(b);
  const Mask ca = clean_pixels(da);
  const Mask cb = clean_pixels(db);

  CodeIndex index;
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (cb[i]) {
      const Vec2 &c = db.code[i];
      index.cells[CodeIndex::key(db.face[i], CodeIndex::cell(c.x()), CodeIndex::cell(c.y()))].push_back(
          static_cast<int>(i));
    }
  }

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (!ca(u, v)) {
        continue;
      }
      const int face = da.face(u, v);
      const Vec2 target_code = da.code(u, v);
      const int cs = CodeIndex::cell(target_code.x());
      const int ct = CodeIndex::cell(target_code.y());

      // Nearest code among the surrounding cells; ties keep the lower pixel index.
      int best = -1;
      double best_d = kInf;
      for (int radius = 1; radius <= 2 && best < 0; ++radius) {
        for (int i = -radius; i <= radius; ++i) {
          for (int j = -radius; j <= radius; ++j) {
            const auto it = index.cells.find(CodeIndex::key(face, cs + i, ct + j));
            if (cs + i < 0 || ct + j < 0 || cs + i >= kCells || ct + j >= kCells || it == index.cells.end()) {
              continue;
            }
            for (int q : it->second) {
              const double dist = (db.code[static_cast<std::size_t>(q)] - target_code).squaredNorm();
              if (dist < best_d || (dist == best_d && q < best)) {
                best_d = dist;
                best = q;
              }
            }
          }
        }
      }
      if (best < 0) {
        continue;
      }

      // Gauss-Newton on the code field of b around the integer hit.
      Vec2 p(best % w, best / w);
      const int qu = best % w;
      const int qv = best / w;
      if (!cb.contains(qu - 1, qv - 1) || !cb.contains(qu + 1, qv + 1)) {
        continue;
      }
      Eigen::Matrix2d jac;
      jac.col(0) = 0.5 * (db.code(qu + 1, qv) - db.code(qu - 1, qv));
      jac.col(1) = 0.5 * (db.code(qu, qv + 1) - db.code(qu, qv - 1));
      if (std::abs(jac.determinant()) < 1e-12) {
        continue;
      }
      const Eigen::Matrix2d jinv = jac.inverse();
      bool ok = true;
      Vec2 code = db.code(qu, qv);
      for (int iter = 0; iter < 4 && ok; ++iter) {
        p += jinv * (target_code - code);
        ok = (p - Vec2(qu, qv)).norm() <= 1.5 && sample_code(db, cb, p, code);
      }
      // One pixel of code change is |jac| ~ 1e-2; 1e-3 of that keeps sub-pixel matches only.
      if (!ok || (code - target_code).norm() > 1e-3 * jac.norm()) {
        continue;
      }
      result.flow(u, v) = p - Vec2(u, v);
      result.confidence(u, v) = 1.0;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------------------------
// scene oracle

MockSceneOracle::MockSceneOracle(scene::Config config) : config_(std::move(config)) {
  config_.validate();
  source_ = scene::render(config_, geom::RigidTransform::identity());
  require(mask::any(source_.object_mask), ErrorKind::InvalidConfig, "scene: object is not visible");
  if (config_.edit.pivot_resolved()) {
    edit_ = config_.edit;
  } else {
    const geom::DepthMap depth(source_.depth, config_.camera);
    edit_ = config_.edit.resolved(geom::selection_centroid(depth, source_.object_mask));
  }
  edited_ = scene::render(config_, edit_);
  background_ = scene::render(config_, std::nullopt);
}

CapabilitySet MockSceneOracle::capabilities() const { return kAll; }

void MockSceneOracle::require_size(const Image &image) const {
  require(image.width() == config_.camera.width && image.height() == config_.camera.height, ErrorKind::InvalidInput,
          fmt::format("mock-scene renders {}x{}, got {}x{}", config_.camera.width, config_.camera.height,
                      image.width(), image.height()));
}

Grid<double> MockSceneOracle::estimate_depth(const Image &image) {
  require_size(image);
  Grid<double> depth = source_.depth;
  for (std::size_t i = 0; i < depth.size(); ++i) {
    if (source_.object_mask[i]) {
      depth[i] = depth[i] * config_.depth_scale + config_.depth_offset;
    }
  }
  return depth;
}

Image MockSceneOracle::inpaint(const InpaintRequest &request) {
  request.validate();
  require_size(request.image);
  // Known pixels that all agree with the object-free rendering mean a background layer is
  // being completed; anything else is a composited target view.
  constexpr float tol = 2.0F / 255.0F;
  bool background_only = true;
  for (std::size_t i = 0; i < request.image.size() && background_only; ++i) {
    if (!request.hole[i]) {
      const Rgb d = request.image[i] - background_.image[i];
      background_only = std::max({std::abs(d.r), std::abs(d.g), std::abs(d.b)}) <= tol;
    }
  }
  const Image &truth = background_only ? background_.image : edited_.image;
  Image out = request.image;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (request.hole[i]) {
      out[i] = truth[i];
    }
  }
  return out;
}

Image MockSceneOracle::undistort(const UndistortRequest &request) {
  request.validate();
  require_size(request.image);
  if (!request.adaptation.empty()) {
    const std::lock_guard lock(mutex_);
    require(handles_.contains(request.adaptation), ErrorKind::OracleRequest,
            fmt::format("unknown adaptation handle '{}'", request.adaptation));
  }
  if (request.sigma == 0.0) {
    return request.image;
  }
  const auto sigma = static_cast<float>(request.sigma);
  Image out = request.image;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (request.mask.empty() || request.mask[i]) {
      out[i] = (1.0F - sigma) * request.image[i] + sigma * edited_.image[i];
    }
  }
  return out;
}

MatchResult MockSceneOracle::match_dense(const Image &a, const Image &b) {
  require_size(a);
  return match_codes(a, b);
}

std::string MockSceneOracle::caption(const Image &image) {
  require_size(image);
  return config_.object.kind == scene::Object::Kind::Box ? "a colourful box in a room" : "a colourful card in a room";
}

std::string MockSceneOracle::tune_adaptation(const Image &image, const std::string &session_id) {
  require_size(image);
  std::string handle = "mock-scene/" + (session_id.empty() ? std::string("default") : session_id);
  const std::lock_guard lock(mutex_);
  handles_.insert(handle);
  return handle;
}

std::vector<double> MockSceneOracle::embed(const Image &image) { return luminance_embedding(image); }

std::optional<Vec2> MockSceneOracle::true_target(const Vec2 &p) const {
  const Vec3 dir = scene::pixel_ray(config_.camera, p.x(), p.y());
  const scene::Hit hit = scene::trace(config_, scene::local_ray(config_.object, geom::RigidTransform::identity()), dir);
  if (!hit.object) {
    return std::nullopt;
  }
  const Vec3 moved = edit_.apply(hit.depth * dir);
  if (moved.z() <= 0.0) {
    return std::nullopt;
  }
  return geom::project(moved, config_.camera);
}

} // namespace edit3d::oracle
