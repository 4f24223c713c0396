#include <edit3d/oracle.hpp>

#include <fmt/format.h>

#include <array>
#include <cmath>

namespace edit3d::oracle {

namespace {

constexpr std::array<std::pair<Capability, std::string_view>, 7> kNames{{
    {Capability::EstimateDepth, "estimate_depth"},
    {Capability::InpaintImage, "inpaint"},
    {Capability::Undistort, "undistort"},
    {Capability::DenseMatch, "match_dense"},
    {Capability::Caption, "caption"},
    {Capability::TuneLora, "tune_adaptation"},
    {Capability::Embed, "embed"},
}};

[[noreturn]] void missing(Capability c) {
  fail(ErrorKind::CapabilityMissing, fmt::format("oracle does not provide {}", to_string(c)));
}

void require_image(const Image &image, std::string_view what) {
  require(!image.empty(), ErrorKind::InvalidInput, fmt::format("{} is empty", what));
}

} // namespace

std::string_view to_string(Capability c) {
  for (const auto &[cap, name] : kNames) {
    if (cap == c) {
      return name;
    }
  }
  return "unknown";
}

Capability capability_from_string(std::string_view name) {
  for (const auto &[cap, n] : kNames) {
    if (n == name) {
      return cap;
    }
  }
  fail(ErrorKind::InvalidInput, fmt::format("unknown capability '{}'", name));
}

const std::vector<Capability> &all_capabilities() {
  static const std::vector<Capability> all = [] {
    std::vector<Capability> v;
    for (const auto &entry : kNames) {
      v.push_back(entry.first);
    }
    return v;
  }();
  return all;
}

void MatchResult::validate(int width, int height) const {
  require(flow.width() == width && flow.height() == height && confidence.same_shape(flow),
          ErrorKind::InvalidInput,
          fmt::format("match result is {}x{}, expected {}x{}", flow.width(), flow.height(), width, height));
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double c = confidence[i];
    require(c >= 0.0 && c <= 1.0, ErrorKind::InvalidInput, "match confidence outside [0, 1]");
    if (c > 0.0) {
      require(flow[i].allFinite(), ErrorKind::InvalidInput, "non-finite flow on a confident pixel");
    }
  }
}

void InpaintRequest::validate() const {
  require_image(image, "inpaint image");
  require(hole.same_shape(image), ErrorKind::InvalidInput, "inpaint hole does not match the image size");
  if (depth_hint) {
    require(depth_hint->same_shape(image), ErrorKind::InvalidInput, "depth hint does not match the image size");
  }
}

void UndistortRequest::validate() const {
  require_image(image, "undistort image");
  require(std::isfinite(sigma) && sigma >= 0.0 && sigma <= 1.0, ErrorKind::InvalidInput,
          fmt::format("sigma {} outside [0, 1]", sigma));
  require(mask.empty() || mask.same_shape(image), ErrorKind::InvalidInput,
          "undistort mask does not match the image size");
}

Grid<double> Oracle::estimate_depth(const Image &) { missing(Capability::EstimateDepth); }
Image Oracle::inpaint(const InpaintRequest &) { missing(Capability::InpaintImage); }
Image Oracle::undistort(const UndistortRequest &) { missing(Capability::Undistort); }
MatchResult Oracle::match_dense(const Image &, const Image &) { missing(Capability::DenseMatch); }
std::string Oracle::caption(const Image &) { missing(Capability::Caption); }
std::string Oracle::tune_adaptation(const Image &, const std::string &) { missing(Capability::TuneLora); }
std::vector<double> Oracle::embed(const Image &) { missing(Capability::Embed); }

void require_capabilities(const Oracle &oracle, const CapabilitySet &needed) {
  const CapabilitySet have = oracle.capabilities();
  std::string absent;
  for (Capability c : needed) {
    if (!have.contains(c)) {
      absent += absent.empty() ? "" : ", ";
      absent += to_string(c);
    }
  }
  require(absent.empty(), ErrorKind::CapabilityMissing,
          fmt::format("oracle '{}' lacks required capabilities: {}", oracle.name(), absent));
}

std::vector<double> luminance_embedding(const Image &image, int side) {
  require_image(image, "embedding input");
  require(side > 0, ErrorKind::InvalidInput, "embedding side must be positive");
  const Image small = resize_bilinear(image, side, side);
  std::vector<double> v(small.size());
  double norm2 = 0.0;
  for (std::size_t i = 0; i < small.size(); ++i) {
    v[i] = small[i].luminance();
    norm2 += v[i] * v[i];
  }
  if (norm2 <= 0.0) {
    // Black image: any fixed unit vector keeps identical inputs at similarity 1.
    std::fill(v.begin(), v.end(), 1.0 / std::sqrt(static_cast<double>(v.size())));
    return v;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (double &x : v) {
    x *= inv;
  }
  return v;
}

} // namespace edit3d::oracle
