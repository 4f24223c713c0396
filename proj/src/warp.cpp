#include <edit3d/correspondence.hpp>
#include <edit3d/warp.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace edit3d::warp {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kMaxStretch = 1.0e6;

bool within_discontinuity(double a, double b, double c, double threshold) {
  const double lo = std::min({a, b, c});
  const double hi = std::max({a, b, c});
  return hi / lo - 1.0 <= threshold;
}

std::uint64_t edge_key(int a, int b) {
  const auto lo = static_cast<std::uint64_t>(std::min(a, b));
  const auto hi = static_cast<std::uint64_t>(std::max(a, b));
  return (lo << 32U) | hi;
}

struct Projected {
  geom::Vec2 xy;
  double z;
};

} // namespace

void MeshConfig::validate() const {
  require(discontinuity_threshold > 0.0, ErrorKind::InvalidConfig, "mesh: discontinuity threshold must be > 0");
  require(thickness_layers >= 0, ErrorKind::InvalidConfig, "mesh: thickness layers must be >= 0");
  require(thickness_deepen >= 0.0, ErrorKind::InvalidConfig, "mesh: thickness deepening must be >= 0");
}

TexturedDepthMesh lift_to_mesh(const Image &image, const Mask &selection, const geom::DepthMap &depth,
                               const MeshConfig &config) {
  config.validate();
  require(image.same_shape(selection) && image.same_shape(depth.values), ErrorKind::InvalidInput,
          "lift_to_mesh: image, mask and depth sizes differ");
  require(mask::any(selection), ErrorKind::EmptySelection, "lift_to_mesh: selection mask is empty");

  TexturedDepthMesh mesh;
  mesh.selection = selection;
  mesh.intrinsics = depth.intrinsics;

  const int w = image.width();
  const int h = image.height();
  Grid<int> vertex_of(w, h, -1);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      if (selection(u, v) == 0 || !depth.valid(u, v)) {
        continue;
      }
      vertex_of(u, v) = static_cast<int>(mesh.vertices.size());
      mesh.vertices.push_back({geom::unproject({u, v}, depth(u, v), depth.intrinsics), {u, v}, image(u, v), true});
    }
  }

  std::vector<std::uint8_t> referenced(mesh.vertices.size(), 0);
  const auto emit = [&](int a, int b, int c) {
    const double za = mesh.vertices[a].position.z();
    const double zb = mesh.vertices[b].position.z();
    const double zc = mesh.vertices[c].position.z();
    if (!within_discontinuity(za, zb, zc, config.discontinuity_threshold)) {
      return;
    }
    mesh.triangles.push_back({a, b, c});
    referenced[a] = referenced[b] = referenced[c] = 1;
  };

  // Quad (u,v)-(u+1,v+1) split along its main diagonal.
  for (int v = 0; v + 1 < h; ++v) {
    for (int u = 0; u + 1 < w; ++u) {
      const int i00 = vertex_of(u, v);
      const int i10 = vertex_of(u + 1, v);
      const int i01 = vertex_of(u, v + 1);
      const int i11 = vertex_of(u + 1, v + 1);
      if (i00 < 0 || i10 < 0 || i01 < 0 || i11 < 0) {
        continue;
      }
      emit(i00, i10, i11);
      emit(i00, i11, i01);
    }
  }
  mesh.surface_triangles = mesh.triangles.size();

  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    if (referenced[i] == 0) {
      mesh.points.push_back(static_cast<int>(i));
    }
  }

  if (config.thickness_layers == 0 || mesh.surface_triangles == 0) {
    return mesh;
  }

  // Boundary edges are used by exactly one surface triangle; keep them in triangle order.
  std::unordered_map<std::uint64_t, int> edge_use;
  edge_use.reserve(mesh.triangles.size() * 3);
  for (const auto &t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      ++edge_use[edge_key(t[k], t[(k + 1) % 3])];
    }
  }
  std::vector<std::array<int, 2>> boundary;
  for (std::size_t ti = 0; ti < mesh.surface_triangles; ++ti) {
    const auto t = mesh.triangles[ti];
    for (int k = 0; k < 3; ++k) {
      if (edge_use[edge_key(t[k], t[(k + 1) % 3])] == 1) {
        boundary.push_back({t[k], t[(k + 1) % 3]});
      }
    }
  }

  const int layers = config.thickness_layers;
  std::unordered_map<int, std::vector<int>> layer_vertices;
  const auto replica = [&](int base, int layer) -> int {
    if (layer == 0) {
      return base;
    }
    auto &chain = layer_vertices[base];
    if (chain.empty()) {
      const MeshVertex origin = mesh.vertices[base];
      for (int k = 1; k <= layers; ++k) {
        const double z = origin.position.z() * (1.0 + config.thickness_deepen * k / layers);
        chain.push_back(static_cast<int>(mesh.vertices.size()));
        mesh.vertices.push_back(
            {geom::unproject(origin.source, z, mesh.intrinsics), origin.source, origin.color, false});
      }
    }
    return chain[static_cast<std::size_t>(layer - 1)];
  };

  for (const auto &e : boundary) {
    for (int k = 1; k <= layers; ++k) {
      const int a0 = replica(e[0], k - 1);
      const int b0 = replica(e[1], k - 1);
      const int a1 = replica(e[0], k);
      const int b1 = replica(e[1], k);
      mesh.triangles.push_back({a0, b0, b1});
      mesh.triangles.push_back({a0, b1, a1});
    }
  }
  return mesh;
}

double surface_area(const TexturedDepthMesh &mesh) {
  double area = 0.0;
  for (std::size_t i = 0; i < mesh.surface_triangles; ++i) {
    const auto &t = mesh.triangles[i];
    const geom::Vec3 &a = mesh.vertices[t[0]].position;
    const geom::Vec3 &b = mesh.vertices[t[1]].position;
    const geom::Vec3 &c = mesh.vertices[t[2]].position;
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

WarpResult rasterize(const TexturedDepthMesh &mesh, const geom::RigidTransform &transform,
                     const geom::CameraIntrinsics &target, const RasterConfig &config) {
  target.validate();
  const int w = target.width;
  const int h = target.height;
  const geom::Vec2 invalid2(kNaN, kNaN);

  WarpResult r;
  r.image = Image(w, h);
  r.visible_mask = Mask(w, h);
  r.ambiguous_mask = Mask(w, h);
  r.stretched_mask = Mask(w, h);
  r.stretch = Grid<double>(w, h, 0.0);
  r.correspondence = Grid<geom::Vec2>(w, h, invalid2);
  r.target_depth = Grid<double>(w, h, kNaN);
  r.anchor_vertex = Grid<int>(w, h, -1);

  const geom::Mat3 linear = transform.linear();
  const geom::Vec3 offset = transform.offset();
  std::vector<Projected> proj(mesh.vertices.size());
  r.vertex_source.resize(mesh.vertices.size());
  r.vertex_target.resize(mesh.vertices.size());
  r.vertex_surface.resize(mesh.vertices.size());
  constexpr double kNear = 1e-6;
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const geom::Vec3 p = linear * mesh.vertices[i].position + offset;
    r.vertex_source[i] = mesh.vertices[i].source;
    r.vertex_surface[i] = mesh.vertices[i].surface ? 1 : 0;
    if (p.z() > kNear) {
      proj[i] = {{target.fx * p.x() / p.z() + target.cx, target.fy * p.y() / p.z() + target.cy}, p.z()};
    } else {
      proj[i] = {invalid2, kNaN};
    }
    r.vertex_target[i] = proj[i].xy;
  }

  Grid<int> owner(w, h, std::numeric_limits<int>::max());
  Grid<double> &zbuf = r.target_depth;

  const auto depth_test = [&](int i, int j, double z, int id) {
    const double current = zbuf(i, j);
    if (std::isnan(current) || z < current - config.depth_tie_epsilon) {
      return true;
    }
    return std::abs(z - current) <= config.depth_tie_epsilon && id < owner(i, j);
  };

  for (std::size_t ti = 0; ti < mesh.triangles.size(); ++ti) {
    const auto &t = mesh.triangles[ti];
    const Projected &p0 = proj[t[0]];
    const Projected &p1 = proj[t[1]];
    const Projected &p2 = proj[t[2]];
    if (std::isnan(p0.z) || std::isnan(p1.z) || std::isnan(p2.z)) {
      continue;
    }
    const double area = (p1.xy.x() - p0.xy.x()) * (p2.xy.y() - p0.xy.y()) -
                        (p2.xy.x() - p0.xy.x()) * (p1.xy.y() - p0.xy.y());
    if (std::abs(area) < 1e-12) {
      continue;
    }
    const double min_x = std::min({p0.xy.x(), p1.xy.x(), p2.xy.x()});
    const double max_x = std::max({p0.xy.x(), p1.xy.x(), p2.xy.x()});
    const double min_y = std::min({p0.xy.y(), p1.xy.y(), p2.xy.y()});
    const double max_y = std::max({p0.xy.y(), p1.xy.y(), p2.xy.y()});
    const int i0 = std::max(0, static_cast<int>(std::ceil(min_x - 1e-9)));
    const int i1 = std::min(w - 1, static_cast<int>(std::floor(max_x + 1e-9)));
    const int j0 = std::max(0, static_cast<int>(std::ceil(min_y - 1e-9)));
    const int j1 = std::min(h - 1, static_cast<int>(std::floor(max_y + 1e-9)));
    if (i0 > i1 || j0 > j1) {
      continue;
    }
    const double inv_area = 1.0 / area;
    const double inv_z0 = 1.0 / p0.z;
    const double inv_z1 = 1.0 / p1.z;
    const double inv_z2 = 1.0 / p2.z;
    const int id = static_cast<int>(ti);
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        const double b0 = ((p1.xy.x() - i) * (p2.xy.y() - j) - (p2.xy.x() - i) * (p1.xy.y() - j)) * inv_area;
        const double b1 = ((p2.xy.x() - i) * (p0.xy.y() - j) - (p0.xy.x() - i) * (p2.xy.y() - j)) * inv_area;
        const double b2 = 1.0 - b0 - b1;
        constexpr double kEdgeEps = -1e-9;
        if (b0 < kEdgeEps || b1 < kEdgeEps || b2 < kEdgeEps) {
          continue;
        }
        // Perspective-correct weights.
        const double q0 = b0 * inv_z0;
        const double q1 = b1 * inv_z1;
        const double q2 = b2 * inv_z2;
        const double inv_z = q0 + q1 + q2;
        const double z = 1.0 / inv_z;
        if (!depth_test(i, j, z, id)) {
          continue;
        }
        const double w0 = q0 * z;
        const double w1 = q1 * z;
        const double w2 = q2 * z;
        const MeshVertex &v0 = mesh.vertices[t[0]];
        const MeshVertex &v1 = mesh.vertices[t[1]];
        const MeshVertex &v2 = mesh.vertices[t[2]];
        zbuf(i, j) = z;
        owner(i, j) = id;
        r.image(i, j) = v0.color * static_cast<float>(w0) + v1.color * static_cast<float>(w1) +
                        v2.color * static_cast<float>(w2);
        r.correspondence(i, j) = v0.source * w0 + v1.source * w1 + v2.source * w2;
        r.anchor_vertex(i, j) = (b0 >= b1 && b0 >= b2) ? t[0] : (b1 >= b2 ? t[1] : t[2]);
      }
    }
  }

  // Isolated vertices: nearest-pixel splats ranked after all triangles.
  const int point_base = static_cast<int>(mesh.triangles.size());
  for (std::size_t k = 0; k < mesh.points.size(); ++k) {
    const int vi = mesh.points[k];
    const Projected &p = proj[static_cast<std::size_t>(vi)];
    if (std::isnan(p.z)) {
      continue;
    }
    const int i = static_cast<int>(std::lround(p.xy.x()));
    const int j = static_cast<int>(std::lround(p.xy.y()));
    const int id = point_base + static_cast<int>(k);
    if (!r.image.contains(i, j) || !depth_test(i, j, p.z, id)) {
      continue;
    }
    zbuf(i, j) = p.z;
    owner(i, j) = id;
    r.image(i, j) = mesh.vertices[static_cast<std::size_t>(vi)].color;
    r.correspondence(i, j) = mesh.vertices[static_cast<std::size_t>(vi)].source;
    r.anchor_vertex(i, j) = vi;
  }

  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    r.visible_mask[i] = std::isnan(zbuf[i]) ? 0 : 1;
  }

  // Stretch ratio from central differences of the correspondence layer.
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      if (r.visible_mask(i, j) == 0) {
        continue;
      }
      const auto derivative = [&](int di, int dj, geom::Vec2 &out) {
        const bool fwd = r.visible_mask.contains(i + di, j + dj) && r.visible_mask(i + di, j + dj) != 0;
        const bool bwd = r.visible_mask.contains(i - di, j - dj) && r.visible_mask(i - di, j - dj) != 0;
        if (fwd && bwd) {
          out = 0.5 * (r.correspondence(i + di, j + dj) - r.correspondence(i - di, j - dj));
        } else if (fwd) {
          out = r.correspondence(i + di, j + dj) - r.correspondence(i, j);
        } else if (bwd) {
          out = r.correspondence(i, j) - r.correspondence(i - di, j - dj);
        } else {
          return false;
        }
        return true;
      };
      geom::Vec2 d_di;
      geom::Vec2 d_dj;
      if (!derivative(1, 0, d_di) || !derivative(0, 1, d_dj)) {
        r.stretch(i, j) = 1.0;
        continue;
      }
      const double s = min_singular_value(d_di.x(), d_dj.x(), d_di.y(), d_dj.y());
      r.stretch(i, j) = s > 1.0 / kMaxStretch ? 1.0 / s : kMaxStretch;
    }
  }

  // Ambiguous: vacated source footprint plus a band around the part of the silhouette that moved.
  Mask moved_edge = mask::inner_boundary(r.visible_mask);
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      if (moved_edge(i, j) == 0) {
        continue;
      }
      const geom::Vec2 &src = r.correspondence(i, j);
      if (std::abs(src.x() - i) <= 0.5 && std::abs(src.y() - j) <= 0.5) {
        moved_edge(i, j) = 0;
      }
    }
  }
  Mask ambiguous = mask::dilate(moved_edge, config.ambiguity_dilation);
  if (mesh.selection.same_shape(r.visible_mask)) {
    ambiguous = mask::unite(ambiguous, mesh.selection);
  }
  r.ambiguous_mask = mask::subtract(ambiguous, r.visible_mask);
  return r;
}

double min_singular_value(double a, double b, double c, double d) {
  const double frob = a * a + b * b + c * c + d * d;
  const double det = std::abs(a * d - b * c);
  const double disc = std::sqrt(std::max(0.0, frob * frob - 4.0 * det * det));
  const double s_max = std::sqrt(0.5 * (frob + disc));
  return s_max > 0.0 ? det / s_max : 0.0;
}

Mask stretch_mask(WarpResult &result, double threshold) {
  require(threshold > 1.0, ErrorKind::InvalidConfig, "stretch threshold must be > 1");
  Mask masked(result.visible_mask.width(), result.visible_mask.height());
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (result.visible_mask[i] != 0 && result.stretch[i] > threshold) {
      masked[i] = 1;
      result.visible_mask[i] = 0;
      result.ambiguous_mask[i] = 1;
      result.correspondence[i] = geom::Vec2(kNaN, kNaN);
      result.target_depth[i] = kNaN;
      result.anchor_vertex[i] = -1;
    }
  }
  result.stretched_mask = mask::unite(result.stretched_mask, masked);
  return masked;
}

align::CorrespondenceSet export_correspondences(const WarpResult &result, int stride) {
  require(stride >= 1, ErrorKind::InvalidConfig, "correspondence stride must be >= 1");
  align::CorrespondenceSet out;
  const std::size_t step = static_cast<std::size_t>(stride) * static_cast<std::size_t>(stride);
  const int w = result.visible_mask.width();
  const int h = result.visible_mask.height();
  std::vector<std::uint8_t> used(result.vertex_source.size(), 0);
  std::size_t ordinal = 0;
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      if (result.visible_mask(i, j) == 0) {
        continue;
      }
      const std::size_t k = ordinal++;
      if (k % step != 0) {
        continue;
      }
      const int vi = result.anchor_vertex(i, j);
      if (vi < 0 || result.vertex_surface[static_cast<std::size_t>(vi)] == 0 ||
          used[static_cast<std::size_t>(vi)] != 0) {
        continue;
      }
      const geom::Vec2 &t = result.vertex_target[static_cast<std::size_t>(vi)];
      if (!t.allFinite() || t.x() < -0.5 || t.y() < -0.5 || t.x() > w - 0.5 || t.y() > h - 0.5) {
        continue;
      }
      used[static_cast<std::size_t>(vi)] = 1;
      out.pairs.push_back({result.vertex_source[static_cast<std::size_t>(vi)], t, 1.0});
    }
  }
  return out;
}

Image composite_over(const WarpResult &result, const Image &background) {
  require(background.same_shape(result.image), ErrorKind::InvalidInput, "composite: size mismatch");
  Image out = background;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (result.visible_mask[i] != 0) {
      out[i] = result.image[i];
    }
  }
  return out;
}

} // namespace edit3d::warp
