#include <edit3d/grid.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace edit3d {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::InvalidInput:
    return "invalid_input";
  case ErrorKind::InvalidConfig:
    return "invalid_config";
  case ErrorKind::ContractViolation:
    return "contract_violation";
  case ErrorKind::BehindCamera:
    return "behind_camera";
  case ErrorKind::EmptySelection:
    return "empty_selection";
  case ErrorKind::Degenerate:
    return "degenerate_input";
  case ErrorKind::EditOutOfFrame:
    return "edit_out_of_frame";
  case ErrorKind::InsufficientCorrespondences:
    return "insufficient_correspondences";
  case ErrorKind::SolverFailure:
    return "solver_failure";
  case ErrorKind::Diverged:
    return "diverged";
  case ErrorKind::CapabilityMissing:
    return "capability_missing";
  case ErrorKind::OracleTimeout:
    return "timeout";
  case ErrorKind::OracleTransport:
    return "transport";
  case ErrorKind::OracleRequest:
    return "bad_request";
  case ErrorKind::Io:
    return "io";
  }
  return "unknown";
}

namespace mask {
namespace {

void check_shape(const Mask &a, const Mask &b) {
  require(a.same_shape(b), ErrorKind::InvalidInput, "mask dimensions differ");
}

template <typename Op> Mask combine(const Mask &a, const Mask &b, Op op) {
  check_shape(a, b);
  Mask out(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = op(a[i] != 0, b[i] != 0) ? 1 : 0;
  }
  return out;
}

// Separable running max over a window of 2*radius+1; `outside` is the value beyond the border.
Mask morph(const Mask &m, int radius, bool dilation) {
  if (radius <= 0) {
    return m;
  }
  const std::uint8_t outside = dilation ? 0 : 1;
  Mask tmp(m.width(), m.height());
  for (int v = 0; v < m.height(); ++v) {
    for (int u = 0; u < m.width(); ++u) {
      bool acc = !dilation;
      for (int k = -radius; k <= radius; ++k) {
        const int uu = u + k;
        const bool set = m.contains(uu, v) ? m(uu, v) != 0 : outside != 0;
        acc = dilation ? (acc || set) : (acc && set);
      }
      tmp(u, v) = acc ? 1 : 0;
    }
  }
  Mask out(m.width(), m.height());
  for (int v = 0; v < m.height(); ++v) {
    for (int u = 0; u < m.width(); ++u) {
      bool acc = !dilation;
      for (int k = -radius; k <= radius; ++k) {
        const int vv = v + k;
        const bool set = tmp.contains(u, vv) ? tmp(u, vv) != 0 : outside != 0;
        acc = dilation ? (acc || set) : (acc && set);
      }
      out(u, v) = acc ? 1 : 0;
    }
  }
  return out;
}

} // namespace

std::size_t count(const Mask &m) {
  return static_cast<std::size_t>(std::count_if(m.data().begin(), m.data().end(), [](auto x) { return x != 0; }));
}

bool any(const Mask &m) {
  return std::any_of(m.data().begin(), m.data().end(), [](auto x) { return x != 0; });
}

Mask unite(const Mask &a, const Mask &b) {
  return combine(a, b, [](bool x, bool y) { return x || y; });
}
Mask intersect(const Mask &a, const Mask &b) {
  return combine(a, b, [](bool x, bool y) { return x && y; });
}
Mask subtract(const Mask &a, const Mask &b) {
  return combine(a, b, [](bool x, bool y) { return x && !y; });
}

Mask invert(const Mask &m) {
  Mask out(m.width(), m.height());
  for (std::size_t i = 0; i < m.size(); ++i) {
    out[i] = m[i] != 0 ? 0 : 1;
  }
  return out;
}

Mask dilate(const Mask &m, int radius) { return morph(m, radius, true); }
Mask erode(const Mask &m, int radius) { return morph(m, radius, false); }

Mask inner_boundary(const Mask &m) {
  Mask out(m.width(), m.height());
  for (int v = 0; v < m.height(); ++v) {
    for (int u = 0; u < m.width(); ++u) {
      if (m(u, v) == 0) {
        continue;
      }
      const bool edge = !m.contains(u - 1, v) || m(u - 1, v) == 0 || !m.contains(u + 1, v) ||
                        m(u + 1, v) == 0 || !m.contains(u, v - 1) || m(u, v - 1) == 0 ||
                        !m.contains(u, v + 1) || m(u, v + 1) == 0;
      out(u, v) = edge ? 1 : 0;
    }
  }
  return out;
}

} // namespace mask

double psnr(const Image &a, const Image &b, const Mask *region) {
  require(a.same_shape(b), ErrorKind::InvalidInput, "psnr: image dimensions differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (region != nullptr && (*region)[i] == 0) {
      continue;
    }
    const Rgb d = a[i] - b[i];
    sum += static_cast<double>(d.r) * d.r + static_cast<double>(d.g) * d.g + static_cast<double>(d.b) * d.b;
    n += 3;
  }
  if (n == 0 || sum == 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return 10.0 * std::log10(1.0 / (sum / static_cast<double>(n)));
}

Rgb sample_bilinear(const Image &image, double u, double v) {
  const int w = image.width();
  const int h = image.height();
  u = std::clamp(u, 0.0, static_cast<double>(w - 1));
  v = std::clamp(v, 0.0, static_cast<double>(h - 1));
  const int u0 = std::min(static_cast<int>(std::floor(u)), w - 1);
  const int v0 = std::min(static_cast<int>(std::floor(v)), h - 1);
  const int u1 = std::min(u0 + 1, w - 1);
  const int v1 = std::min(v0 + 1, h - 1);
  const auto fu = static_cast<float>(u - u0);
  const auto fv = static_cast<float>(v - v0);
  const Rgb top = image(u0, v0) * (1.F - fu) + image(u1, v0) * fu;
  const Rgb bottom = image(u0, v1) * (1.F - fu) + image(u1, v1) * fu;
  return top * (1.F - fv) + bottom * fv;
}

Image resize_bilinear(const Image &image, int width, int height) {
  require(width > 0 && height > 0 && !image.empty(), ErrorKind::InvalidInput, "resize: empty image");
  Image out(width, height);
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      out(u, v) = sample_bilinear(image, (u + 0.5) * sx - 0.5, (v + 0.5) * sy - 0.5);
    }
  }
  return out;
}

} // namespace edit3d
