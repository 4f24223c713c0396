#pragma once

#include <edit3d/geom.hpp>
#include <edit3d/grid.hpp>

#include <array>
#include <cstddef>
#include <vector>

namespace edit3d::align {
struct CorrespondenceSet;
}

namespace edit3d::warp {

struct MeshConfig {
  /// Relative depth jump (max/min - 1) above which a triangle is not emitted.
  double discontinuity_threshold = 0.10;
  /// Number of replicated boundary layers used to give the object thickness.
  int thickness_layers = 2;
  /// Total deepening of the outermost replicated layer, relative to local depth.
  double thickness_deepen = 0.05;

  void validate() const;
};

struct MeshVertex {
  geom::Vec3 position;
  geom::Vec2 source;  // integer source pixel the vertex was lifted from
  Rgb color;
  bool surface = true; // false for replicated thickness-layer vertices
};

struct TexturedDepthMesh {
  std::vector<MeshVertex> vertices;
  std::vector<std::array<int, 3>> triangles;
  /// Triangles [0, surface_triangles) come from the depth map; the rest are thickness walls.
  std::size_t surface_triangles = 0;
  /// Surface vertices not referenced by any surface triangle; rasterized as single-pixel splats.
  std::vector<int> points;
  Mask selection;
  geom::CameraIntrinsics intrinsics;
};

[[nodiscard]] TexturedDepthMesh lift_to_mesh(const Image &image, const Mask &selection, const geom::DepthMap &depth,
                                             const MeshConfig &config = {});

/// Sum of the areas of the surface triangles in metres squared.
[[nodiscard]] double surface_area(const TexturedDepthMesh &mesh);

struct RasterConfig {
  /// Dilation of the moved part of the warped silhouette that becomes ambiguous.
  int ambiguity_dilation = 3;
  /// Depth tolerance under which the lower primitive index wins.
  double depth_tie_epsilon = 1e-7;
};

struct WarpResult {
  Image image;
  Mask visible_mask;
  Mask ambiguous_mask;
  Mask stretched_mask;
  Grid<double> stretch;            // l' per target pixel, 0 where not visible
  Grid<geom::Vec2> correspondence; // source (u, v) per visible target pixel, NaN elsewhere
  Grid<double> target_depth;       // z-buffer, NaN where not visible
  /// Nearest mesh vertex of the covering primitive, -1 where not visible.
  Grid<int> anchor_vertex;
  std::vector<geom::Vec2> vertex_source;
  std::vector<geom::Vec2> vertex_target; // NaN when the vertex is behind the camera
  std::vector<std::uint8_t> vertex_surface;
};

[[nodiscard]] WarpResult rasterize(const TexturedDepthMesh &mesh, const geom::RigidTransform &transform,
                                   const geom::CameraIntrinsics &target, const RasterConfig &config = {});

inline constexpr double kDefaultStretchThreshold = 4.0;

/// Marks pixels with l' > threshold, moving them from visible to ambiguous.
/// Throws InvalidConfig when threshold <= 1.
Mask stretch_mask(WarpResult &result, double threshold = kDefaultStretchThreshold);

/// Smallest singular value of a 2x2 matrix [[a, b], [c, d]].
[[nodiscard]] double min_singular_value(double a, double b, double c, double d);

/// Subsampled exact source/target pairs: every stride^2-th visible surface pixel in raster
/// order contributes its anchor vertex once.
[[nodiscard]] align::CorrespondenceSet export_correspondences(const WarpResult &result, int stride);

/// Warped foreground over `background` (visible pixels replaced).
[[nodiscard]] Image composite_over(const WarpResult &result, const Image &background);

} // namespace edit3d::warp
