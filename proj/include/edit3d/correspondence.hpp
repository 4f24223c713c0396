#pragma once

#include <edit3d/geom.hpp>

#include <string>
#include <string_view>
#include <vector>

namespace edit3d::align {

struct Correspondence {
  geom::Vec2 source; // x_I (u, v)
  geom::Vec2 target; // x_J (i, j)
  double confidence = 1.0;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;

  [[nodiscard]] std::size_t size() const noexcept { return pairs.size(); }
  [[nodiscard]] bool empty() const noexcept { return pairs.empty(); }

  /// Coordinates inside [0, w-1] x [0, h-1] of the respective frames and confidences in [0, 1].
  void validate(int source_width, int source_height, int target_width, int target_height) const;
};

/// CSV rows "u,v,i,j,confidence" with a header line.
[[nodiscard]] std::string to_csv(const CorrespondenceSet &set);
[[nodiscard]] CorrespondenceSet from_csv(std::string_view text);

} // namespace edit3d::align
