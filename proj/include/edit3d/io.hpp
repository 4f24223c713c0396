#pragma once

#include <edit3d/geom.hpp>
#include <edit3d/grid.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace edit3d::io {

using Bytes = std::vector<std::uint8_t>;

/// Canonical PNG: one IDAT, filter type 0 on every row, zlib level 9. Identical inputs give
/// identical bytes, which the protocol fixtures rely on.
[[nodiscard]] Bytes encode_png(const Image &image, int bit_depth = 16);
/// 8-bit grayscale, set pixels written as 255.
[[nodiscard]] Bytes encode_png(const Mask &mask);

/// Any gray/RGB(A) PNG at 8 or 16 bits; samples scaled to [0, 1], alpha dropped.
[[nodiscard]] Image decode_png_image(std::span<const std::uint8_t> png);
/// Pixels whose brightest channel is >= 128 (8-bit scale) are set.
[[nodiscard]] Mask decode_png_mask(std::span<const std::uint8_t> png);

[[nodiscard]] std::string base64_encode(std::span<const std::uint8_t> bytes);
[[nodiscard]] Bytes base64_decode(std::string_view text);
[[nodiscard]] std::string sha256_hex(std::span<const std::uint8_t> bytes);

/// Interleaved little-endian float32 raster.
struct FloatField {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> data;

  void validate() const;
};

[[nodiscard]] FloatField to_field(const Grid<double> &g);
[[nodiscard]] Grid<double> to_grid(const FloatField &f);

[[nodiscard]] Bytes f32le_bytes(const FloatField &f);
[[nodiscard]] FloatField from_f32le_bytes(std::span<const std::uint8_t> bytes, int width, int height, int channels);

/// {"format": "f32le", "width", "height", "channels", "data": base64}
[[nodiscard]] nlohmann::json field_to_json(const FloatField &f);
[[nodiscard]] FloatField field_from_json(const nlohmann::json &j);

[[nodiscard]] Bytes read_file(const std::filesystem::path &path);
/// Writes through a temporary file and a rename so readers never see partial content.
void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path &path, std::string_view text);
[[nodiscard]] std::string read_text(const std::filesystem::path &path);

[[nodiscard]] Image read_image(const std::filesystem::path &path);
void write_image(const std::filesystem::path &path, const Image &image);
[[nodiscard]] Mask read_mask(const std::filesystem::path &path);
void write_mask(const std::filesystem::path &path, const Mask &mask);

/// `stem`.f32 plus a `stem`.json sidecar holding the shape and intrinsics.
void write_depth(const std::filesystem::path &stem, const geom::DepthMap &depth);
[[nodiscard]] geom::DepthMap read_depth(const std::filesystem::path &stem);

} // namespace edit3d::io
