#include <doctest.h>

#include <edit3d/io.hpp>

#include "support/scenes.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include <fmt/format.h>
#include <unistd.h>

using namespace edit3d;
using namespace edit3d::io;

namespace {

Bytes bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

std::filesystem::path scratch(const char *name) {
  auto dir = std::filesystem::temp_directory_path() / fmt::format("edit3d_io_{}_{}", name, ::getpid());
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace

TEST_CASE("png: 16-bit image round trip within quantisation") {
  const Image img = testing::smooth_texture(37, 23);
  const Bytes png = encode_png(img);
  const Image back = decode_png_image(png);
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) {
    REQUIRE(std::abs(back[i].r - img[i].r) <= 0.5F / 65535.F + 1e-7F);
    REQUIRE(std::abs(back[i].g - img[i].g) <= 0.5F / 65535.F + 1e-7F);
    REQUIRE(std::abs(back[i].b - img[i].b) <= 0.5F / 65535.F + 1e-7F);
  }
  // Re-encoding the decoded image is a fixed point.
  CHECK(encode_png(back) == png);
  CHECK(encode_png(img) == png);
}

TEST_CASE("png: 8-bit image, clamping and header fields") {
  Image img(3, 2);
  img(0, 0) = {-0.5F, 0.5F, 2.0F};
  img(2, 1) = {1.0F, 0.0F, 0.25F};
  const Bytes png = encode_png(img, 8);
  // IHDR: width 3, height 2, depth 8, colour type 2.
  REQUIRE(png.size() > 33);
  CHECK(png[16 + 3] == 3);
  CHECK(png[20 + 3] == 2);
  CHECK(png[24] == 8);
  CHECK(png[25] == 2);
  const Image back = decode_png_image(png);
  CHECK(back(0, 0).r == 0.F);
  CHECK(back(0, 0).g == doctest::Approx(128.0 / 255.0));
  CHECK(back(0, 0).b == 1.F);
  CHECK(back(2, 1).b == doctest::Approx(64.0 / 255.0));
  CHECK_THROWS_AS((void)encode_png(img, 12), Error);
}

TEST_CASE("png: masks are exact and decode as grey images too") {
  std::mt19937_64 rng(4);
  Mask m(41, 17);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = (rng() % 3 == 0) ? 1 : 0;
  }
  m[5] = 7; // any non-zero value is "set"
  const Bytes png = encode_png(m);
  const Mask back = decode_png_mask(png);
  for (std::size_t i = 0; i < m.size(); ++i) {
    REQUIRE((back[i] != 0) == (m[i] != 0));
  }
  const Image grey = decode_png_image(png);
  CHECK(grey(5, 0) == Rgb{1.F, 1.F, 1.F});
  // An RGB image whose brightest channel crosses the threshold reads as a set mask pixel.
  Image img(2, 1);
  img(0, 0) = {0.0F, 0.6F, 0.0F};
  img(1, 0) = {0.45F, 0.45F, 0.45F};
  const Mask from_rgb = decode_png_mask(encode_png(img, 8));
  CHECK(from_rgb(0, 0) == 1);
  CHECK(from_rgb(1, 0) == 0);
}

TEST_CASE("png: malformed streams are rejected") {
  CHECK_THROWS_AS((void)decode_png_image(bytes_of("not a png")), Error);
  Bytes png = encode_png(testing::smooth_texture(8, 8));
  png.resize(png.size() / 2);
  try {
    (void)decode_png_image(png);
    FAIL("truncated stream decoded");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::InvalidInput);
  }
}

TEST_CASE("base64 and sha256 reference vectors") {
  // RFC 4648 section 10.
  const std::pair<const char *, const char *> cases[] = {
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto &[plain, encoded] : cases) {
    CHECK(base64_encode(bytes_of(plain)) == encoded);
    CHECK(base64_decode(encoded) == bytes_of(plain));
  }
  CHECK_THROWS_AS((void)base64_decode("Zm9"), Error);
  CHECK_THROWS_AS((void)base64_decode("Zm9*"), Error);

  // FIPS 180-2 examples.
  CHECK(sha256_hex(bytes_of("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(bytes_of("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("base64 round trip on random payloads") {
  std::mt19937_64 rng(9);
  for (int n = 0; n < 200; ++n) {
    Bytes b(static_cast<std::size_t>(n));
    for (auto &x : b) {
      x = static_cast<std::uint8_t>(rng());
    }
    REQUIRE(base64_decode(base64_encode(b)) == b);
  }
}

TEST_CASE("float fields: little-endian layout, NaN and JSON envelope") {
  FloatField f{2, 1, 1, {1.0F, std::numeric_limits<float>::quiet_NaN()}};
  const Bytes b = f32le_bytes(f);
  REQUIRE(b.size() == 8);
  CHECK(b[0] == 0x00);
  CHECK(b[1] == 0x00);
  CHECK(b[2] == 0x80);
  CHECK(b[3] == 0x3f);

  const nlohmann::json j = field_to_json(f);
  CHECK(j.at("format") == "f32le");
  CHECK(j.at("data") == "AACAPwAAwH8=");
  const FloatField back = field_from_json(j);
  CHECK(back.width == 2);
  CHECK(back.data[0] == 1.0F);
  CHECK(std::isnan(back.data[1]));

  nlohmann::json short_data = j;
  short_data["width"] = 3;
  CHECK_THROWS_AS((void)field_from_json(short_data), Error);
  nlohmann::json wrong = j;
  wrong["format"] = "f64le";
  CHECK_THROWS_AS((void)field_from_json(wrong), Error);

  Grid<double> g(3, 2, 0.0);
  g(1, 1) = 2.5;
  CHECK(to_grid(to_field(g)) == g);
}

TEST_CASE("files: atomic writes, depth sidecar round trip") {
  const auto dir = scratch("files");
  write_text(dir / "a.txt", "hello");
  CHECK(read_text(dir / "a.txt") == "hello");
  write_text(dir / "a.txt", "again");
  CHECK(read_text(dir / "a.txt") == "again");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto &e : std::filesystem::directory_iterator(dir)) {
    ++entries;
  }
  CHECK(entries == 1); // no temporaries left behind

  const auto k = testing::square_camera(6, 5.0);
  geom::DepthMap d(k, 2.0);
  d(3, 2) = std::numeric_limits<double>::quiet_NaN();
  d(1, 4) = 0.75;
  write_depth(dir / "depth", d);
  CHECK(std::filesystem::file_size(dir / "depth.f32") == 6 * 6 * 4);
  const auto meta = nlohmann::json::parse(read_text(dir / "depth.json"));
  CHECK(meta.at("units") == "metres");
  const geom::DepthMap back = read_depth(dir / "depth");
  CHECK(back.intrinsics == k);
  CHECK(back(1, 4) == 0.75);
  CHECK(std::isnan(back(3, 2)));
  CHECK(back(0, 0) == 2.0);

  write_image(dir / "img.png", testing::smooth_texture(5, 5));
  CHECK(read_image(dir / "img.png").width() == 5);
  try {
    (void)read_file(dir / "missing.png");
    FAIL("read of a missing file succeeded");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
  std::filesystem::remove_all(dir);
}
