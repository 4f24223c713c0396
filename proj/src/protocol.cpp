#include <edit3d/protocol.hpp>

#include <edit3d/io.hpp>
#include <edit3d/mock_oracles.hpp>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <thread>

namespace edit3d::protocol {

using nlohmann::json;
using oracle::Capability;

namespace {

constexpr ErrorKind kAllKinds[] = {
    ErrorKind::InvalidInput,   ErrorKind::InvalidConfig,     ErrorKind::ContractViolation,
    ErrorKind::BehindCamera,   ErrorKind::EmptySelection,    ErrorKind::Degenerate,
    ErrorKind::EditOutOfFrame, ErrorKind::InsufficientCorrespondences, ErrorKind::SolverFailure,
    ErrorKind::Diverged,       ErrorKind::CapabilityMissing, ErrorKind::OracleTimeout,
    ErrorKind::OracleTransport, ErrorKind::OracleRequest,    ErrorKind::Io,
};

template <typename T> T field(const json &body, const char *key) {
  try {
    return body.at(key).get<T>();
  } catch (const json::exception &e) {
    fail(ErrorKind::InvalidInput, fmt::format("field '{}': {}", key, e.what()));
  }
}

json with_envelope(const Envelope &e, json payload) {
  payload["request_id"] = e.request_id;
  payload["seed"] = e.seed;
  return payload;
}

json to_field_json(const Grid<double> &g) { return io::field_to_json(io::to_field(g)); }

Grid<double> from_field_json(const json &j, const char *what) {
  const io::FloatField f = io::field_from_json(j);
  require(f.channels == 1, ErrorKind::InvalidInput, fmt::format("{}: expected one channel", what));
  return io::to_grid(f);
}

} // namespace

std::string dump(const json &j) { return j.dump(-1, ' ', true); }

std::string encode_image(const Image &image) { return io::base64_encode(io::encode_png(image)); }

Image decode_image(const json &j) {
  require(j.is_string(), ErrorKind::InvalidInput, "image payload must be a base64 string");
  return io::decode_png_image(io::base64_decode(j.get<std::string>()));
}

std::string encode_mask(const Mask &mask) { return io::base64_encode(io::encode_png(mask)); }

Mask decode_mask(const json &j) {
  require(j.is_string(), ErrorKind::InvalidInput, "mask payload must be a base64 string");
  return io::decode_png_mask(io::base64_decode(j.get<std::string>()));
}

std::string path_of(Capability c) { return fmt::format("/{}/{}", kVersion, oracle::to_string(c)); }

json depth_request(const Envelope &e, const Image &image) { return with_envelope(e, {{"image", encode_image(image)}}); }

json inpaint_request(const Envelope &e, const oracle::InpaintRequest &r) {
  json p = {{"image", encode_image(r.image)}, {"hole", encode_mask(r.hole)}, {"prompt", r.prompt}};
  p["depth_hint"] = r.depth_hint ? to_field_json(*r.depth_hint) : json(nullptr);
  Envelope env = e;
  env.seed = r.seed;
  return with_envelope(env, std::move(p));
}

json undistort_request(const Envelope &e, const oracle::UndistortRequest &r) {
  json p = {{"image", encode_image(r.image)},
            {"sigma", r.sigma},
            {"session_id", r.session_id},
            {"adaptation", r.adaptation}};
  p["mask"] = r.mask.empty() ? json(nullptr) : json(encode_mask(r.mask));
  Envelope env = e;
  env.seed = r.seed;
  return with_envelope(env, std::move(p));
}

json match_request(const Envelope &e, const Image &a, const Image &b) {
  return with_envelope(e, {{"image_a", encode_image(a)}, {"image_b", encode_image(b)}});
}

json caption_request(const Envelope &e, const Image &image) { return with_envelope(e, {{"image", encode_image(image)}}); }

json tune_request(const Envelope &e, const Image &image, const std::string &session_id) {
  return with_envelope(e, {{"image", encode_image(image)}, {"session_id", session_id}});
}

json embed_request(const Envelope &e, const Image &image) { return with_envelope(e, {{"image", encode_image(image)}}); }

Envelope envelope_of(const json &body) {
  require(body.is_object(), ErrorKind::InvalidInput, "request body must be a JSON object");
  return {field<std::string>(body, "request_id"), field<std::uint64_t>(body, "seed")};
}

oracle::InpaintRequest parse_inpaint(const json &body) {
  oracle::InpaintRequest r;
  r.image = decode_image(body.at("image"));
  r.hole = decode_mask(body.at("hole"));
  if (body.contains("depth_hint") && !body.at("depth_hint").is_null()) {
    r.depth_hint = from_field_json(body.at("depth_hint"), "depth_hint");
  }
  r.prompt = body.value("prompt", std::string());
  r.seed = field<std::uint64_t>(body, "seed");
  r.validate();
  return r;
}

oracle::UndistortRequest parse_undistort(const json &body) {
  oracle::UndistortRequest r;
  r.image = decode_image(body.at("image"));
  r.sigma = field<double>(body, "sigma");
  if (body.contains("mask") && !body.at("mask").is_null()) {
    r.mask = decode_mask(body.at("mask"));
  }
  r.session_id = body.value("session_id", std::string());
  r.adaptation = body.value("adaptation", std::string());
  r.seed = field<std::uint64_t>(body, "seed");
  r.validate();
  return r;
}

json depth_response(const std::string &request_id, const Grid<double> &depth) {
  return {{"request_id", request_id}, {"depth", to_field_json(depth)}};
}

json image_response(const std::string &request_id, const Image &image) {
  return {{"request_id", request_id}, {"image", encode_image(image)}};
}

json match_response(const std::string &request_id, const oracle::MatchResult &m) {
  io::FloatField flow{m.flow.width(), m.flow.height(), 2, {}};
  flow.data.reserve(m.flow.size() * 2);
  for (const auto &f : m.flow.data()) {
    flow.data.push_back(static_cast<float>(f.x()));
    flow.data.push_back(static_cast<float>(f.y()));
  }
  return {{"request_id", request_id}, {"flow", io::field_to_json(flow)}, {"confidence", to_field_json(m.confidence)}};
}

json capabilities_response(const oracle::Oracle &oracle) {
  json names = json::array();
  for (Capability c : oracle.capabilities()) {
    names.push_back(oracle::to_string(c));
  }
  return {{"capabilities", names}, {"name", oracle.name()}, {"protocol", kVersion}};
}

Grid<double> parse_depth(const json &body) { return from_field_json(body.at("depth"), "depth"); }

oracle::MatchResult parse_match(const json &body) {
  const io::FloatField flow = io::field_from_json(body.at("flow"));
  require(flow.channels == 2, ErrorKind::InvalidInput, "flow: expected two channels");
  oracle::MatchResult m{Grid<geom::Vec2>(flow.width, flow.height),
                        from_field_json(body.at("confidence"), "confidence")};
  for (std::size_t i = 0; i < m.flow.size(); ++i) {
    m.flow[i] = {flow.data[2 * i], flow.data[2 * i + 1]};
  }
  m.validate(flow.width, flow.height);
  return m;
}

oracle::CapabilitySet parse_capabilities(const json &body) {
  oracle::CapabilitySet set;
  for (const auto &name : field<std::vector<std::string>>(body, "capabilities")) {
    // Capabilities this client does not know are ignored rather than fatal.
    try {
      set.insert(oracle::capability_from_string(name));
    } catch (const Error &) {
      spdlog::debug("ignoring unknown oracle capability '{}'", name);
    }
  }
  return set;
}

json error_body(ErrorKind kind, std::string_view message) {
  return {{"error", {{"code", to_string(kind)}, {"message", message}}}};
}

int status_of(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::InvalidInput:
  case ErrorKind::InvalidConfig:
  case ErrorKind::Degenerate:
  case ErrorKind::EmptySelection:
    return 400;
  case ErrorKind::OracleRequest:
    return 422;
  case ErrorKind::CapabilityMissing:
    return 501;
  case ErrorKind::OracleTimeout:
    return 504;
  default:
    return 500;
  }
}

ErrorKind error_kind_from_code(std::string_view code) {
  for (ErrorKind k : kAllKinds) {
    if (to_string(k) == code) {
      return k;
    }
  }
  return ErrorKind::OracleRequest;
}

Reply dispatch(oracle::Oracle &oracle, std::string_view method, std::string_view path, std::string_view body) {
  const auto error = [](int status, ErrorKind kind, std::string_view message) {
    return Reply{status, dump(error_body(kind, message))};
  };
  try {
    if (path == fmt::format("/{}/capabilities", kVersion)) {
      if (method != "GET") {
        return error(405, ErrorKind::InvalidInput, "capabilities is GET only");
      }
      return {200, dump(capabilities_response(oracle))};
    }
    std::optional<Capability> cap;
    for (Capability c : oracle::all_capabilities()) {
      if (path == path_of(c)) {
        cap = c;
      }
    }
    if (!cap) {
      return Reply{404, dump({{"error", {{"code", "not_found"}, {"message", fmt::format("no route {}", path)}}}})};
    }
    if (method != "POST") {
      return error(405, ErrorKind::InvalidInput, "oracle operations are POST only");
    }
    if (!oracle.capabilities().contains(*cap)) {
      return error(501, ErrorKind::CapabilityMissing, fmt::format("{} is not offered", oracle::to_string(*cap)));
    }
    json req;
    try {
      req = json::parse(body);
    } catch (const json::exception &e) {
      return error(400, ErrorKind::InvalidInput, fmt::format("malformed JSON: {}", e.what()));
    }
    const Envelope env = envelope_of(req);
    json out;
    switch (*cap) {
    case Capability::EstimateDepth:
      out = depth_response(env.request_id, oracle.estimate_depth(decode_image(req.at("image"))));
      break;
    case Capability::InpaintImage:
      out = image_response(env.request_id, oracle.inpaint(parse_inpaint(req)));
      break;
    case Capability::Undistort:
      out = image_response(env.request_id, oracle.undistort(parse_undistort(req)));
      break;
    case Capability::DenseMatch: {
      const Image a = decode_image(req.at("image_a"));
      const Image b = decode_image(req.at("image_b"));
      require(a.same_shape(b), ErrorKind::InvalidInput, "match_dense: image sizes differ");
      out = match_response(env.request_id, oracle.match_dense(a, b));
      break;
    }
    case Capability::Caption:
      out = {{"request_id", env.request_id}, {"caption", oracle.caption(decode_image(req.at("image")))}};
      break;
    case Capability::TuneLora:
      out = {{"request_id", env.request_id},
             {"handle", oracle.tune_adaptation(decode_image(req.at("image")), field<std::string>(req, "session_id"))}};
      break;
    case Capability::Embed:
      out = {{"request_id", env.request_id}, {"embedding", oracle.embed(decode_image(req.at("image")))}};
      break;
    }
    return {200, dump(out)};
  } catch (const Error &e) {
    return error(status_of(e.kind()), e.kind(), e.what());
  } catch (const json::exception &e) {
    return error(400, ErrorKind::InvalidInput, e.what());
  } catch (const std::exception &e) {
    return error(500, ErrorKind::OracleRequest, e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// client

HttpOracle::HttpOracle(std::string endpoint, ClientOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {
  constexpr std::string_view scheme = "http://";
  require(endpoint_.starts_with(scheme), ErrorKind::InvalidConfig,
          fmt::format("oracle endpoint '{}' must start with http://", endpoint_));
  std::string rest = endpoint_.substr(scheme.size());
  while (!rest.empty() && rest.back() == '/') {
    rest.pop_back();
  }
  require(rest.find('/') == std::string::npos, ErrorKind::InvalidConfig, "oracle endpoint must not carry a path");
  const auto colon = rest.rfind(':');
  host_ = rest.substr(0, colon);
  if (colon != std::string::npos) {
    try {
      port_ = std::stoi(rest.substr(colon + 1));
    } catch (const std::exception &) {
      fail(ErrorKind::InvalidConfig, fmt::format("bad port in oracle endpoint '{}'", endpoint_));
    }
  }
  require(!host_.empty() && port_ > 0 && port_ < 65536, ErrorKind::InvalidConfig,
          fmt::format("bad oracle endpoint '{}'", endpoint_));
  require(options_.timeout.count() > 0 && options_.retries >= 0, ErrorKind::InvalidConfig, "bad client options");
}

json HttpOracle::call(std::string_view method, const std::string &path, const json *body) const {
  const std::string payload = body ? dump(*body) : std::string();
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
  for (int attempt = 0;; ++attempt) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    const auto start = std::chrono::steady_clock::now();
    auto res = method == "GET" ? client.Get(path) : client.Post(path, payload, "application/json");
    if (!res) {
      const auto elapsed = std::chrono::steady_clock::now() - start;
      const std::string what = httplib::to_string(res.error());
      if (elapsed >= options_.timeout || res.error() == httplib::Error::ConnectionTimeout) {
        fail(ErrorKind::OracleTimeout, fmt::format("{} {}: no answer within {} ms", method, path,
                                                   options_.timeout.count()));
      }
      if (attempt < options_.retries) {
        spdlog::warn("oracle {} {} failed ({}), retrying", method, path, what);
        continue;
      }
      fail(ErrorKind::OracleTransport, fmt::format("{} {} at {}: {}", method, path, endpoint_, what));
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::exception &) {
      fail(ErrorKind::OracleRequest, fmt::format("{} {}: status {} with a non-JSON body", method, path, res->status));
    }
    if (res->status != 200) {
      std::string code = "unknown";
      std::string message = res->body;
      if (reply.contains("error")) {
        code = reply["error"].value("code", code);
        message = reply["error"].value("message", message);
      }
      const ErrorKind remote = error_kind_from_code(code);
      const ErrorKind kind =
          remote == ErrorKind::CapabilityMissing || remote == ErrorKind::OracleTimeout ? remote : ErrorKind::OracleRequest;
      fail(kind, fmt::format("oracle {} answered {} ({}): {}", path, res->status, code, message));
    }
    return reply;
  }
}

Envelope HttpOracle::next_envelope(std::uint64_t seed) {
  return {fmt::format("req-{}", counter_.fetch_add(1) + 1), seed};
}

std::string HttpOracle::name() const {
  (void)capabilities();
  const std::lock_guard lock(mutex_);
  return capabilities_->value("name", std::string("remote"));
}

oracle::CapabilitySet HttpOracle::capabilities() const {
  {
    const std::lock_guard lock(mutex_);
    if (capabilities_) {
      return parse_capabilities(*capabilities_);
    }
  }
  json reply = call("GET", fmt::format("/{}/capabilities", kVersion), nullptr);
  const std::lock_guard lock(mutex_);
  capabilities_ = std::move(reply);
  return parse_capabilities(*capabilities_);
}

Grid<double> HttpOracle::estimate_depth(const Image &image) {
  const json body = depth_request(next_envelope(), image);
  return parse_depth(call("POST", path_of(Capability::EstimateDepth), &body));
}

Image HttpOracle::inpaint(const oracle::InpaintRequest &request) {
  request.validate();
  const json body = inpaint_request(next_envelope(), request);
  return decode_image(call("POST", path_of(Capability::InpaintImage), &body).at("image"));
}

Image HttpOracle::undistort(const oracle::UndistortRequest &request) {
  request.validate();
  const json body = undistort_request(next_envelope(), request);
  return decode_image(call("POST", path_of(Capability::Undistort), &body).at("image"));
}

oracle::MatchResult HttpOracle::match_dense(const Image &a, const Image &b) {
  const json body = match_request(next_envelope(), a, b);
  oracle::MatchResult m = parse_match(call("POST", path_of(Capability::DenseMatch), &body));
  m.validate(a.width(), a.height());
  return m;
}

std::string HttpOracle::caption(const Image &image) {
  const json body = caption_request(next_envelope(), image);
  return field<std::string>(call("POST", path_of(Capability::Caption), &body), "caption");
}

std::string HttpOracle::tune_adaptation(const Image &image, const std::string &session_id) {
  const json body = tune_request(next_envelope(), image, session_id);
  return field<std::string>(call("POST", path_of(Capability::TuneLora), &body), "handle");
}

std::vector<double> HttpOracle::embed(const Image &image) {
  const json body = embed_request(next_envelope(), image);
  return field<std::vector<double>>(call("POST", path_of(Capability::Embed), &body), "embedding");
}

// ---------------------------------------------------------------------------------------------
// server

struct OracleServer::Impl {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::mutex join_mutex;
};

OracleServer::OracleServer(oracle::Oracle &oracle, const std::string &host, int port)
    : impl_(std::make_unique<Impl>()) {
  auto handler = [&oracle](const httplib::Request &req, httplib::Response &res) {
    const Reply reply = dispatch(oracle, req.method, req.path, req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  impl_->server.Get(R"(/.*)", handler);
  impl_->server.Post(R"(/.*)", handler);
  impl_->port = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  require(impl_->port > 0, ErrorKind::Io, fmt::format("cannot bind oracle server to {}:{}", host, port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

OracleServer::~OracleServer() { stop(); }

int OracleServer::port() const noexcept { return impl_->port; }

void OracleServer::stop() {
  impl_->server.stop();
  wait();
}

void OracleServer::wait() {
  const std::lock_guard lock(impl_->join_mutex);
  if (impl_->thread.joinable()) {
    impl_->thread.join();
  }
}

std::unique_ptr<oracle::Oracle> make_oracle(const std::string &spec) {
  if (spec == "mock:identity") {
    return std::make_unique<oracle::IdentityMock>();
  }
  if (spec.starts_with("mock:")) {
    return std::make_unique<oracle::MockSceneOracle>(oracle::scene::load(spec.substr(5)));
  }
  if (spec.starts_with("http://")) {
    return std::make_unique<HttpOracle>(spec);
  }
  fail(ErrorKind::InvalidConfig,
       fmt::format("oracle spec '{}' must be mock:identity, mock:<scene.json> or http://host:port", spec));
}

} // namespace edit3d::protocol
