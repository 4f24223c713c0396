#pragma once

#include <edit3d/geom.hpp>
#include <edit3d/grid.hpp>

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace edit3d::oracle {

enum class Capability { EstimateDepth, InpaintImage, Undistort, DenseMatch, Caption, TuneLora, Embed };

using CapabilitySet = std::set<Capability>;

[[nodiscard]] std::string_view to_string(Capability c);
/// Throws InvalidInput for unknown names.
[[nodiscard]] Capability capability_from_string(std::string_view name);
[[nodiscard]] const std::vector<Capability> &all_capabilities();

/// Dense flow a -> b with per-pixel confidence in [0, 1].
struct MatchResult {
  Grid<geom::Vec2> flow;
  Grid<double> confidence;

  void validate(int width, int height) const;
};

struct InpaintRequest {
  Image image;
  Mask hole;
  std::optional<Grid<double>> depth_hint;
  std::string prompt;
  std::uint64_t seed = 0;

  void validate() const;
};

struct UndistortRequest {
  Image image;
  double sigma = 0.0;
  Mask mask; // region the perturbation may touch
  std::string session_id;
  std::string adaptation; // handle from tune_adaptation, may be empty
  std::uint64_t seed = 0;

  void validate() const;
};

/// The generative boundary: every learned model sits behind this interface.
/// Unimplemented operations throw CapabilityMissing.
class Oracle {
public:
  virtual ~Oracle() = default;

  [[nodiscard]] virtual std::string name() const = 0;
  [[nodiscard]] virtual CapabilitySet capabilities() const = 0;

  /// Metric depth, same size as the image.
  virtual Grid<double> estimate_depth(const Image &image);
  virtual Image inpaint(const InpaintRequest &request);
  virtual Image undistort(const UndistortRequest &request);
  virtual MatchResult match_dense(const Image &a, const Image &b);
  virtual std::string caption(const Image &image);
  virtual std::string tune_adaptation(const Image &image, const std::string &session_id);
  virtual std::vector<double> embed(const Image &image);
};

/// Throws CapabilityMissing naming every absent capability.
void require_capabilities(const Oracle &oracle, const CapabilitySet &needed);

/// Unit-length vector of the image luminance resampled to side x side.
[[nodiscard]] std::vector<double> luminance_embedding(const Image &image, int side = 16);

} // namespace edit3d::oracle
