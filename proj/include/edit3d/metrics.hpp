#pragma once

#include <edit3d/oracle.hpp>

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace edit3d::metrics {

inline constexpr double kConfidenceThreshold = 0.25;
/// Side of the square both images are resampled to before embedding.
inline constexpr int kEmbeddingSide = 224;

struct ConfidenceAggregates {
  double mean_confidence = 0.0;
  double confident_area = 0.0; // fraction of the region with confidence > threshold
};

/// Throws Degenerate when `region` is empty.
[[nodiscard]] ConfidenceAggregates confidence_aggregates(const oracle::MatchResult &m, const Mask &region,
                                                         double threshold = kConfidenceThreshold);

struct WarpBack {
  Image image;
  Mask valid; // sample position inside the edited image
};

/// out(p) = edited(p + flow(p)), bilinear. The flow lives on the original image's grid and
/// points into the edited one, i.e. match_dense(original, edited).
[[nodiscard]] WarpBack warp_back(const Image &edited, const oracle::MatchResult &m);

struct ConsistencyReport {
  /// Cosine of the oracle embeddings; absent when the oracle cannot embed.
  std::optional<double> perceptual_similarity;
  /// RMSE between the original and the warped-back edit on confident region pixels. Stands in
  /// for a learned perceptual distance; 1.0 when no pixel qualifies.
  double lpips_proxy = 0.0;
  std::string lpips_source = "warp-back-rmse";
  double mean_confidence = 0.0;
  double confident_area = 0.0;
  std::size_t region_pixels = 0;
};

/// `m` is match_dense(original, edited); `region` is the foreground in the original frame.
[[nodiscard]] ConsistencyReport report(const Image &original, const Image &edited, const oracle::MatchResult &m,
                                       const Mask &region, oracle::Oracle *oracle,
                                       double threshold = kConfidenceThreshold);

void to_json(nlohmann::json &j, const ConsistencyReport &r);

} // namespace edit3d::metrics
