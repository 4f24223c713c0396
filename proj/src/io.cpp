#include <edit3d/io.hpp>

#include <fmt/format.h>
#include <openssl/evp.h>
#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <random>

namespace edit3d::io {
namespace {

void put_u32(Bytes &out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(Bytes &out, const char (&type)[5], const Bytes &payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const auto crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

Bytes assemble_png(int width, int height, int bit_depth, int colour_type, const Bytes &raw) {
  Bytes out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  Bytes ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(static_cast<std::uint8_t>(bit_depth));
  ihdr.push_back(static_cast<std::uint8_t>(colour_type));
  ihdr.push_back(0); // deflate
  ihdr.push_back(0); // adaptive filtering (every row uses type 0)
  ihdr.push_back(0); // no interlace
  put_chunk(out, "IHDR", ihdr);
  uLongf size = compressBound(static_cast<uLong>(raw.size()));
  Bytes idat(size);
  const int rc = compress2(idat.data(), &size, raw.data(), static_cast<uLong>(raw.size()), 9);
  require(rc == Z_OK, ErrorKind::Io, "png: deflate failed");
  idat.resize(size);
  put_chunk(out, "IDAT", idat);
  put_chunk(out, "IEND", {});
  return out;
}

std::uint16_t quantize16(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0F, 0.0F, 1.0F);
  return static_cast<std::uint16_t>(std::lround(c * 65535.0F));
}

std::uint8_t quantize8(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0F, 0.0F, 1.0F);
  return static_cast<std::uint8_t>(std::lround(c * 255.0F));
}

struct PngReadState {
  std::span<const std::uint8_t> data;
  std::size_t offset = 0;
  char message[256] = {};
};

void png_read_callback(png_structp png, png_bytep out, png_size_t length) {
  auto *s = static_cast<PngReadState *>(png_get_io_ptr(png));
  if (s->offset + length > s->data.size()) {
    png_error(png, "truncated PNG");
  }
  std::memcpy(out, s->data.data() + s->offset, length);
  s->offset += length;
}

void png_error_callback(png_structp png, png_const_charp message) {
  auto *s = static_cast<PngReadState *>(png_get_io_ptr(png));
  if (s != nullptr) {
    std::snprintf(s->message, sizeof(s->message), "%s", message);
  }
  png_longjmp(png, 1);
}

void png_warning_callback(png_structp, png_const_charp) {}

// Decoded samples as 16-bit RGB, row-major.
struct Rgb16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> samples;
  int max_value = 65535;
};

Rgb16 decode_rgb16(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0, ErrorKind::InvalidInput, "not a PNG stream");
  PngReadState state{bytes, 0, {}};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_callback, png_warning_callback);
  require(png != nullptr, ErrorKind::Io, "png: out of memory");
  png_infop info = png_create_info_struct(png);
  Rgb16 out;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  png_set_read_fn(png, &state, png_read_callback);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::InvalidInput, fmt::format("png decode failed: {}", state.message));
  }
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int colour = png_get_color_type(png, info);
  png_set_expand(png);
  png_set_strip_alpha(png);
  if (colour == PNG_COLOR_TYPE_GRAY || colour == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  const bool sixteen = depth == 16;
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * height);
  rows.resize(height);
  for (std::size_t r = 0; r < height; ++r) {
    rows[r] = buffer.data() + r * stride;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out.width = static_cast<int>(width);
  out.height = static_cast<int>(height);
  out.max_value = sixteen ? 65535 : 255;
  out.samples.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t r = 0; r < height; ++r) {
    const std::uint8_t *row = rows[r];
    for (std::size_t i = 0; i < static_cast<std::size_t>(width) * 3; ++i) {
      out.samples[r * width * 3 + i] =
          sixteen ? static_cast<std::uint16_t>((row[2 * i] << 8) | row[2 * i + 1]) : row[i];
    }
  }
  return out;
}

} // namespace

Bytes encode_png(const Image &image, int bit_depth) {
  require(bit_depth == 8 || bit_depth == 16, ErrorKind::InvalidInput, "png: bit depth must be 8 or 16");
  require(!image.empty(), ErrorKind::InvalidInput, "png: empty image");
  const int w = image.width();
  const int bytes_per = bit_depth / 8;
  Bytes raw;
  raw.reserve(static_cast<std::size_t>(image.height()) * (1 + static_cast<std::size_t>(w) * 3 * bytes_per));
  for (int v = 0; v < image.height(); ++v) {
    raw.push_back(0);
    for (int u = 0; u < w; ++u) {
      const Rgb &p = image(u, v);
      for (const float c : {p.r, p.g, p.b}) {
        if (bit_depth == 16) {
          const std::uint16_t q = quantize16(c);
          raw.push_back(static_cast<std::uint8_t>(q >> 8));
          raw.push_back(static_cast<std::uint8_t>(q & 0xff));
        } else {
          raw.push_back(quantize8(c));
        }
      }
    }
  }
  return assemble_png(w, image.height(), bit_depth, 2, raw);
}

Bytes encode_png(const Mask &mask) {
  require(!mask.empty(), ErrorKind::InvalidInput, "png: empty mask");
  Bytes raw;
  raw.reserve(static_cast<std::size_t>(mask.height()) * (1 + static_cast<std::size_t>(mask.width())));
  for (int v = 0; v < mask.height(); ++v) {
    raw.push_back(0);
    for (int u = 0; u < mask.width(); ++u) {
      raw.push_back(mask(u, v) != 0 ? 255 : 0);
    }
  }
  return assemble_png(mask.width(), mask.height(), 8, 0, raw);
}

Image decode_png_image(std::span<const std::uint8_t> png) {
  const Rgb16 d = decode_rgb16(png);
  Image out(d.width, d.height);
  const float scale = 1.0F / static_cast<float>(d.max_value);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = {d.samples[3 * i] * scale, d.samples[3 * i + 1] * scale, d.samples[3 * i + 2] * scale};
  }
  return out;
}

Mask decode_png_mask(std::span<const std::uint8_t> png) {
  const Rgb16 d = decode_rgb16(png);
  Mask out(d.width, d.height);
  const int threshold = d.max_value == 255 ? 128 : 128 * 257;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int m = std::max({d.samples[3 * i], d.samples[3 * i + 1], d.samples[3 * i + 2]});
    out[i] = m >= threshold ? 1 : 0;
  }
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

Bytes base64_decode(std::string_view text) {
  require(text.size() % 4 == 0, ErrorKind::InvalidInput, "base64: length is not a multiple of 4");
  if (text.empty()) {
    return {};
  }
  Bytes out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char *>(text.data()),
                                static_cast<int>(text.size()));
  require(n >= 0, ErrorKind::InvalidInput, "base64: malformed input");
  std::size_t padding = 0;
  if (text.back() == '=') {
    padding = text[text.size() - 2] == '=' ? 2 : 1;
  }
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) == 1, ErrorKind::Io,
          "sha256 failed");
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += fmt::format("{:02x}", digest[i]);
  }
  return out;
}

void FloatField::validate() const {
  require(width > 0 && height > 0 && channels > 0, ErrorKind::InvalidInput, "float field: non-positive shape");
  require(data.size() == static_cast<std::size_t>(width) * height * channels, ErrorKind::InvalidInput,
          "float field: data size does not match shape");
}

FloatField to_field(const Grid<double> &g) {
  FloatField f{g.width(), g.height(), 1, std::vector<float>(g.size())};
  for (std::size_t i = 0; i < g.size(); ++i) {
    f.data[i] = static_cast<float>(g[i]);
  }
  return f;
}

Grid<double> to_grid(const FloatField &f) {
  require(f.channels == 1, ErrorKind::InvalidInput, "float field: expected one channel");
  f.validate();
  Grid<double> g(f.width, f.height);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = f.data[i];
  }
  return g;
}

Bytes f32le_bytes(const FloatField &f) {
  f.validate();
  Bytes out(f.data.size() * 4);
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(f.data[i]);
    out[4 * i] = static_cast<std::uint8_t>(bits);
    out[4 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
    out[4 * i + 2] = static_cast<std::uint8_t>(bits >> 16);
    out[4 * i + 3] = static_cast<std::uint8_t>(bits >> 24);
  }
  return out;
}

FloatField from_f32le_bytes(std::span<const std::uint8_t> bytes, int width, int height, int channels) {
  FloatField f{width, height, channels, {}};
  require(width > 0 && height > 0 && channels > 0, ErrorKind::InvalidInput, "float field: non-positive shape");
  const std::size_t n = static_cast<std::size_t>(width) * height * channels;
  require(bytes.size() == 4 * n, ErrorKind::InvalidInput,
          fmt::format("float field: expected {} bytes, got {}", 4 * n, bytes.size()));
  f.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = bytes[4 * i] | (bytes[4 * i + 1] << 8) | (bytes[4 * i + 2] << 16) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    f.data[i] = std::bit_cast<float>(bits);
  }
  return f;
}

nlohmann::json field_to_json(const FloatField &f) {
  return {{"format", "f32le"},
          {"width", f.width},
          {"height", f.height},
          {"channels", f.channels},
          {"data", base64_encode(f32le_bytes(f))}};
}

FloatField field_from_json(const nlohmann::json &j) {
  try {
    require(j.at("format").get<std::string>() == "f32le", ErrorKind::InvalidInput, "float field: format must be f32le");
    const auto bytes = base64_decode(j.at("data").get<std::string>());
    return from_f32le_bytes(bytes, j.at("width").get<int>(), j.at("height").get<int>(), j.at("channels").get<int>());
  } catch (const nlohmann::json::exception &e) {
    fail(ErrorKind::InvalidInput, fmt::format("float field: {}", e.what()));
  }
}

Bytes read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Io, fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  thread_local std::mt19937_64 rng{std::random_device{}()};
  const auto tmp = path.string() + fmt::format(".tmp{:x}", rng());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, fmt::format("cannot write '{}'", tmp));
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorKind::Io, fmt::format("short write to '{}'", tmp));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    fail(ErrorKind::Io, fmt::format("cannot move '{}' into place: {}", path.string(), ec.message()));
  }
}

void write_text(const std::filesystem::path &path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t *>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path &path) {
  const Bytes b = read_file(path);
  return {b.begin(), b.end()};
}

Image read_image(const std::filesystem::path &path) { return decode_png_image(read_file(path)); }

void write_image(const std::filesystem::path &path, const Image &image) { write_file(path, encode_png(image)); }

Mask read_mask(const std::filesystem::path &path) { return decode_png_mask(read_file(path)); }

void write_mask(const std::filesystem::path &path, const Mask &mask) { write_file(path, encode_png(mask)); }

void write_depth(const std::filesystem::path &stem, const geom::DepthMap &depth) {
  const FloatField f = to_field(depth.values);
  write_file(std::filesystem::path(stem).replace_extension(".f32"), f32le_bytes(f));
  const nlohmann::json sidecar = {{"format", "f32le"},
                                  {"width", f.width},
                                  {"height", f.height},
                                  {"channels", 1},
                                  {"units", "metres"},
                                  {"intrinsics", depth.intrinsics}};
  write_text(std::filesystem::path(stem).replace_extension(".json"), sidecar.dump(2));
}

geom::DepthMap read_depth(const std::filesystem::path &stem) {
  const auto sidecar = nlohmann::json::parse(read_text(std::filesystem::path(stem).replace_extension(".json")));
  const FloatField f = from_f32le_bytes(read_file(std::filesystem::path(stem).replace_extension(".f32")),
                                        sidecar.at("width").get<int>(), sidecar.at("height").get<int>(), 1);
  return {to_grid(f), sidecar.at("intrinsics").get<geom::CameraIntrinsics>()};
}

} // namespace edit3d::io
