#pragma once

// HTTP/JSON wire format of the oracle boundary.
//
// Every POST body carries "request_id" and "seed" next to the payload. Images travel as base64
// canonical 16-bit RGB PNG, masks as base64 8-bit grey PNG, float rasters as f32le field objects
// (see io::field_to_json). Failures are {"error": {"code", "message"}} with a non-2xx status.

#include <edit3d/oracle.hpp>

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace edit3d::protocol {

inline constexpr std::string_view kVersion = "v1";

/// Compact, key-sorted, ASCII-only serialisation; the byte form the fixtures pin down.
[[nodiscard]] std::string dump(const nlohmann::json &j);

[[nodiscard]] std::string encode_image(const Image &image);
[[nodiscard]] Image decode_image(const nlohmann::json &j);
[[nodiscard]] std::string encode_mask(const Mask &mask);
[[nodiscard]] Mask decode_mask(const nlohmann::json &j);

/// Endpoint path ("/v1/inpaint", ...) of a capability.
[[nodiscard]] std::string path_of(oracle::Capability c);

struct Envelope {
  std::string request_id;
  std::uint64_t seed = 0;
};

// Request bodies.
[[nodiscard]] nlohmann::json depth_request(const Envelope &e, const Image &image);
[[nodiscard]] nlohmann::json inpaint_request(const Envelope &e, const oracle::InpaintRequest &r);
[[nodiscard]] nlohmann::json undistort_request(const Envelope &e, const oracle::UndistortRequest &r);
[[nodiscard]] nlohmann::json match_request(const Envelope &e, const Image &a, const Image &b);
[[nodiscard]] nlohmann::json caption_request(const Envelope &e, const Image &image);
[[nodiscard]] nlohmann::json tune_request(const Envelope &e, const Image &image, const std::string &session_id);
[[nodiscard]] nlohmann::json embed_request(const Envelope &e, const Image &image);

[[nodiscard]] Envelope envelope_of(const nlohmann::json &body);
[[nodiscard]] oracle::InpaintRequest parse_inpaint(const nlohmann::json &body);
[[nodiscard]] oracle::UndistortRequest parse_undistort(const nlohmann::json &body);

// Response bodies.
[[nodiscard]] nlohmann::json depth_response(const std::string &request_id, const Grid<double> &depth);
[[nodiscard]] nlohmann::json image_response(const std::string &request_id, const Image &image);
[[nodiscard]] nlohmann::json match_response(const std::string &request_id, const oracle::MatchResult &m);
[[nodiscard]] nlohmann::json capabilities_response(const oracle::Oracle &oracle);

[[nodiscard]] Grid<double> parse_depth(const nlohmann::json &body);
[[nodiscard]] oracle::MatchResult parse_match(const nlohmann::json &body);
[[nodiscard]] oracle::CapabilitySet parse_capabilities(const nlohmann::json &body);

[[nodiscard]] nlohmann::json error_body(ErrorKind kind, std::string_view message);
/// HTTP status used for an error kind.
[[nodiscard]] int status_of(ErrorKind kind);
/// Inverse of to_string(ErrorKind); unknown codes map to OracleRequest.
[[nodiscard]] ErrorKind error_kind_from_code(std::string_view code);

struct Reply {
  int status = 200;
  std::string body;
};

/// Routes one request to `oracle`. Never throws: failures become error replies.
[[nodiscard]] Reply dispatch(oracle::Oracle &oracle, std::string_view method, std::string_view path,
                             std::string_view body);

struct ClientOptions {
  std::chrono::milliseconds timeout{120'000};
  int retries = 1; // extra attempts after a transport failure
};

/// Oracle reached over HTTP, e.g. "http://127.0.0.1:8700".
class HttpOracle final : public oracle::Oracle {
public:
  explicit HttpOracle(std::string endpoint, ClientOptions options = {});

  [[nodiscard]] std::string name() const override;
  /// Queried once from GET /v1/capabilities and cached.
  [[nodiscard]] oracle::CapabilitySet capabilities() const override;

  Grid<double> estimate_depth(const Image &image) override;
  Image inpaint(const oracle::InpaintRequest &request) override;
  Image undistort(const oracle::UndistortRequest &request) override;
  oracle::MatchResult match_dense(const Image &a, const Image &b) override;
  std::string caption(const Image &image) override;
  std::string tune_adaptation(const Image &image, const std::string &session_id) override;
  std::vector<double> embed(const Image &image) override;

  [[nodiscard]] const std::string &endpoint() const noexcept { return endpoint_; }

private:
  [[nodiscard]] nlohmann::json call(std::string_view method, const std::string &path, const nlohmann::json *body) const;
  [[nodiscard]] Envelope next_envelope(std::uint64_t seed = 0);

  std::string endpoint_;
  std::string host_;
  int port_ = 80;
  ClientOptions options_;
  std::atomic<std::uint64_t> counter_{0};
  mutable std::mutex mutex_;
  mutable std::optional<nlohmann::json> capabilities_;
};

/// Serves an oracle on a background thread until stop() or destruction.
class OracleServer {
public:
  OracleServer(oracle::Oracle &oracle, const std::string &host, int port);
  ~OracleServer();
  OracleServer(const OracleServer &) = delete;
  OracleServer &operator=(const OracleServer &) = delete;

  /// Bound port (useful when 0 was requested).
  [[nodiscard]] int port() const noexcept;
  void stop();
  /// Blocks until stop() is called from elsewhere.
  void wait();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// "mock:identity", "mock:<scene.json>" or an http:// endpoint.
[[nodiscard]] std::unique_ptr<oracle::Oracle> make_oracle(const std::string &spec);

} // namespace edit3d::protocol
