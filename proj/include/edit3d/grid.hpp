#pragma once

#include <edit3d/error.hpp>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace edit3d {

/// Dense row-major 2D array addressed as (u, v) = (column, row).
template <typename T> class Grid {
public:
  using value_type = T;

  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
    require(width >= 0 && height >= 0, ErrorKind::InvalidInput, "grid dimensions must be non-negative");
  }

  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] bool contains(int u, int v) const noexcept {
    return u >= 0 && v >= 0 && u < width_ && v < height_;
  }
  [[nodiscard]] std::size_t index(int u, int v) const noexcept {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(u);
  }

  T &operator()(int u, int v) noexcept { return data_[index(u, v)]; }
  const T &operator()(int u, int v) const noexcept { return data_[index(u, v)]; }
  T &operator[](std::size_t i) noexcept { return data_[i]; }
  const T &operator[](std::size_t i) const noexcept { return data_[i]; }

  [[nodiscard]] std::span<T> data() noexcept { return data_; }
  [[nodiscard]] std::span<const T> data() const noexcept { return data_; }

  template <typename U> [[nodiscard]] bool same_shape(const Grid<U> &other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  void fill(const T &value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const Grid &) const = default;

private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct Rgb {
  float r = 0.F;
  float g = 0.F;
  float b = 0.F;

  bool operator==(const Rgb &) const = default;

  Rgb &operator+=(const Rgb &o) noexcept {
    r += o.r;
    g += o.g;
    b += o.b;
    return *this;
  }
  friend Rgb operator+(Rgb a, const Rgb &b) noexcept { return a += b; }
  friend Rgb operator-(const Rgb &a, const Rgb &b) noexcept { return {a.r - b.r, a.g - b.g, a.b - b.b}; }
  friend Rgb operator*(const Rgb &a, float s) noexcept { return {a.r * s, a.g * s, a.b * s}; }
  friend Rgb operator*(float s, const Rgb &a) noexcept { return a * s; }

  [[nodiscard]] float luminance() const noexcept { return 0.299F * r + 0.587F * g + 0.114F * b; }
};

/// Linear RGB image with channel values nominally in [0, 1].
using Image = Grid<Rgb>;

/// Binary mask; any non-zero entry is "set".
using Mask = Grid<std::uint8_t>;

namespace mask {

[[nodiscard]] std::size_t count(const Mask &m);
[[nodiscard]] bool any(const Mask &m);
[[nodiscard]] Mask unite(const Mask &a, const Mask &b);
[[nodiscard]] Mask intersect(const Mask &a, const Mask &b);
[[nodiscard]] Mask subtract(const Mask &a, const Mask &b);
[[nodiscard]] Mask invert(const Mask &m);
/// Square (Chebyshev) dilation by `radius` pixels.
[[nodiscard]] Mask dilate(const Mask &m, int radius);
/// Square (Chebyshev) erosion by `radius` pixels; pixels beyond the border count as set.
[[nodiscard]] Mask erode(const Mask &m, int radius);
/// Set pixels with at least one 4-neighbour that is unset or outside the image.
[[nodiscard]] Mask inner_boundary(const Mask &m);

} // namespace mask

/// Peak signal-to-noise ratio in dB over pixels where `region` is set (all pixels when empty).
[[nodiscard]] double psnr(const Image &a, const Image &b, const Mask *region = nullptr);

/// Bilinear sample with border clamping; the caller checks bounds if needed.
[[nodiscard]] Rgb sample_bilinear(const Image &image, double u, double v);

/// Box-filter/bilinear resize used for fixed-size embeddings and previews.
[[nodiscard]] Image resize_bilinear(const Image &image, int width, int height);

} // namespace edit3d
