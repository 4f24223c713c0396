#include <edit3d/correspondence.hpp>

#include <fmt/format.h>

#include <sstream>

namespace edit3d::align {

void CorrespondenceSet::validate(int source_width, int source_height, int target_width, int target_height) const {
  const auto inside = [](const geom::Vec2 &p, int w, int h) {
    return p.allFinite() && p.x() >= -0.5 && p.y() >= -0.5 && p.x() <= w - 0.5 && p.y() <= h - 0.5;
  };
  for (const auto &c : pairs) {
    require(inside(c.source, source_width, source_height), ErrorKind::InvalidInput,
            "correspondence source outside the source image");
    require(inside(c.target, target_width, target_height), ErrorKind::InvalidInput,
            "correspondence target outside the target image");
    require(c.confidence >= 0.0 && c.confidence <= 1.0, ErrorKind::InvalidInput,
            "correspondence confidence outside [0, 1]");
  }
}

std::string to_csv(const CorrespondenceSet &set) {
  std::string out = "u,v,i,j,confidence\n";
  for (const auto &c : set.pairs) {
    out += fmt::format("{},{},{},{},{}\n", c.source.x(), c.source.y(), c.target.x(), c.target.y(), c.confidence);
  }
  return out;
}

CorrespondenceSet from_csv(std::string_view text) {
  CorrespondenceSet set;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    if (header) {
      header = false;
      if (line.rfind("u,", 0) == 0) {
        continue;
      }
    }
    double values[5];
    std::size_t pos = 0;
    for (int k = 0; k < 5; ++k) {
      const std::size_t end = k < 4 ? line.find(',', pos) : line.size();
      require(end != std::string::npos, ErrorKind::InvalidInput, "correspondence CSV: expected 5 columns");
      try {
        values[k] = std::stod(line.substr(pos, end - pos));
      } catch (const std::exception &) {
        fail(ErrorKind::InvalidInput, "correspondence CSV: malformed number in line '" + line + "'");
      }
      pos = end + 1;
    }
    set.pairs.push_back({{values[0], values[1]}, {values[2], values[3]}, values[4]});
  }
  return set;
}

} // namespace edit3d::align
