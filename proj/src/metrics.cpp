#include <edit3d/metrics.hpp>

#include <cmath>

namespace edit3d::metrics {

ConfidenceAggregates confidence_aggregates(const oracle::MatchResult &m, const Mask &region, double threshold) {
  require(region.same_shape(m.confidence), ErrorKind::InvalidInput, "confidence region does not match the flow size");
  double sum = 0.0;
  std::size_t n = 0;
  std::size_t above = 0;
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (region[i]) {
      sum += m.confidence[i];
      above += m.confidence[i] > threshold ? 1 : 0;
      ++n;
    }
  }
  require(n > 0, ErrorKind::Degenerate, "confidence aggregates over an empty region");
  return {sum / static_cast<double>(n), static_cast<double>(above) / static_cast<double>(n)};
}

WarpBack warp_back(const Image &edited, const oracle::MatchResult &m) {
  require(m.flow.same_shape(edited), ErrorKind::InvalidInput, "warp_back: flow does not match the edited image");
  const int w = edited.width();
  const int h = edited.height();
  WarpBack out{Image(w, h), Mask(w, h, 0)};
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const geom::Vec2 p = geom::Vec2(u, v) + m.flow(u, v);
      if (!p.allFinite() || p.x() < 0.0 || p.y() < 0.0 || p.x() > w - 1 || p.y() > h - 1) {
        continue;
      }
      out.image(u, v) = sample_bilinear(edited, p.x(), p.y());
      out.valid(u, v) = 1;
    }
  }
  return out;
}

ConsistencyReport report(const Image &original, const Image &edited, const oracle::MatchResult &m, const Mask &region,
                         oracle::Oracle *oracle, double threshold) {
  require(original.same_shape(edited), ErrorKind::InvalidInput, "report: image sizes differ");
  m.validate(original.width(), original.height());
  ConsistencyReport r;
  const ConfidenceAggregates agg = confidence_aggregates(m, region, threshold);
  r.mean_confidence = agg.mean_confidence;
  r.confident_area = agg.confident_area;
  r.region_pixels = mask::count(region);

  const WarpBack back = warp_back(edited, m);
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (region[i] && back.valid[i] && m.confidence[i] > threshold) {
      const Rgb d = back.image[i] - original[i];
      se += static_cast<double>(d.r) * d.r + static_cast<double>(d.g) * d.g + static_cast<double>(d.b) * d.b;
      n += 3;
    }
  }
  r.lpips_proxy = n > 0 ? std::sqrt(se / static_cast<double>(n)) : 1.0;

  if (oracle != nullptr && oracle->capabilities().contains(oracle::Capability::Embed)) {
    const auto a = oracle->embed(resize_bilinear(original, kEmbeddingSide, kEmbeddingSide));
    const auto b = oracle->embed(resize_bilinear(edited, kEmbeddingSide, kEmbeddingSide));
    require(a.size() == b.size() && !a.empty(), ErrorKind::OracleRequest, "embeddings differ in length");
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += a[i] * b[i];
      aa += a[i] * a[i];
      bb += b[i] * b[i];
    }
    r.perceptual_similarity = aa > 0.0 && bb > 0.0 ? std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0) : 0.0;
  }
  return r;
}

void to_json(nlohmann::json &j, const ConsistencyReport &r) {
  j = {{"lpips_proxy", r.lpips_proxy},
       {"lpips_source", r.lpips_source},
       {"mean_confidence", r.mean_confidence},
       {"confident_area", r.confident_area},
       {"region_pixels", r.region_pixels}};
  j["perceptual_similarity"] = r.perceptual_similarity ? nlohmann::json(*r.perceptual_similarity) : nlohmann::json();
}

} // namespace edit3d::metrics
