#include <edit3d/harness.hpp>
#include <edit3d/io.hpp>
#include <edit3d/protocol.hpp>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <ctime>
#include <random>

namespace edit3d::harness {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr const char *kManifest = "session.json";
constexpr const char *kOutput = "output.png";

int rank(Status s) {
  switch (s) {
  case Status::Created:
    return 0;
  case Status::Preparing:
    return 1;
  case Status::Iterating:
    return 2;
  case Status::Done:
  case Status::Failed:
    return 3;
  }
  return 3;
}

void hash_inputs(const fs::path &dir, SessionManifest &m) {
  m.input_hashes.clear();
  for (const auto &entry : fs::directory_iterator(dir / "inputs")) {
    if (entry.is_regular_file()) {
      m.input_hashes[entry.path().filename().string()] = io::sha256_hex(io::read_file(entry.path()));
    }
  }
}

void record_failure(SessionManifest &m, const std::string &code, const std::string &message) {
  m.status = Status::Failed;
  m.error_code = code;
  m.error_message = message;
}

} // namespace

std::string_view to_string(Status s) {
  switch (s) {
  case Status::Created:
    return "created";
  case Status::Preparing:
    return "preparing";
  case Status::Iterating:
    return "iterating";
  case Status::Done:
    return "done";
  case Status::Failed:
    return "failed";
  }
  return "failed";
}

Status status_from_string(std::string_view s) {
  for (Status c : {Status::Created, Status::Preparing, Status::Iterating, Status::Done, Status::Failed}) {
    if (to_string(c) == s) {
      return c;
    }
  }
  fail(ErrorKind::InvalidInput, fmt::format("unknown session status '{}'", s));
}

bool can_transition(Status from, int from_iteration, Status to, int to_iteration) {
  if (from == to) {
    return from != Status::Iterating || to_iteration >= from_iteration;
  }
  if (from == Status::Done || from == Status::Failed) {
    return false;
  }
  if (to == Status::Failed) {
    return true;
  }
  if (to == Status::Iterating && from == Status::Preparing) {
    return to_iteration == 0;
  }
  if (to == Status::Done) {
    return from == Status::Iterating;
  }
  return rank(to) == rank(from) + 1 && to != Status::Iterating;
}

void to_json(json &j, const SessionManifest &m) {
  json calls = json::array();
  for (const auto &c : m.calls) {
    json r;
    pipeline::to_json(r, c);
    calls.push_back(r);
  }
  json config;
  pipeline::to_json(config, m.config);
  j = {{"id", m.id},
       {"status", std::string(to_string(m.status))},
       {"iteration", m.iteration},
       {"completed_iterations", m.completed_iterations},
       {"input_hashes", m.input_hashes},
       {"config", config},
       {"oracle", {{"spec", m.config.oracle}, {"name", m.oracle_name}}},
       {"created_at", m.created_at},
       {"updated_at", m.updated_at},
       {"calls", calls}};
  j["error"] = m.error_code.empty() ? json() : json{{"code", m.error_code}, {"message", m.error_message}};
}

void from_json(const json &j, SessionManifest &m) {
  m.id = j.at("id").get<std::string>();
  m.status = status_from_string(j.at("status").get<std::string>());
  m.iteration = j.value("iteration", 0);
  m.completed_iterations = j.value("completed_iterations", 0);
  m.input_hashes = j.value("input_hashes", std::map<std::string, std::string>{});
  m.config = pipeline::EditConfig{};
  pipeline::from_json(j.at("config"), m.config);
  m.oracle_name = j.contains("oracle") ? j.at("oracle").value("name", std::string()) : std::string();
  m.created_at = j.value("created_at", std::string());
  m.updated_at = j.value("updated_at", std::string());
  m.calls.clear();
  for (const auto &c : j.value("calls", json::array())) {
    m.calls.push_back({c.at("operation").get<std::string>(), c.value("ms", 0.0), c.value("ok", true),
                       c.value("error", std::string())});
  }
  if (j.contains("error") && j.at("error").is_object()) {
    m.error_code = j.at("error").value("code", std::string());
    m.error_message = j.at("error").value("message", std::string());
  } else {
    m.error_code.clear();
    m.error_message.clear();
  }
}

OracleFactory default_oracle_factory() {
  return [](const std::string &spec) { return protocol::make_oracle(spec); };
}

// ---- SessionDir ----

SessionDir::SessionDir(fs::path dir) : dir_(std::move(dir)) {}

bool SessionDir::exists() const { return fs::exists(dir_ / kManifest); }

SessionDir SessionDir::create(const fs::path &dir, std::string id, const SessionInputs &inputs,
                              const pipeline::EditConfig &config) {
  config.validate();
  const pipeline::EditSession session =
      pipeline::make_session(id, inputs.image, inputs.mask, inputs.transform, inputs.intrinsics);
  if (inputs.depth) {
    const geom::DepthMap &d = *inputs.depth;
    require(d.values.same_shape(session.source), ErrorKind::InvalidInput, "depth does not match the image size");
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      require(!session.selection[i] || (std::isfinite(d.values[i]) && d.values[i] > 0.0), ErrorKind::InvalidInput,
              "depth must be positive under the selection");
    }
  }
  SessionDir out(dir);
  if (out.exists()) {
    throw Conflict(fmt::format("{} already holds a session", dir.string()));
  }
  fs::create_directories(dir);
  pipeline::write_inputs(dir, session);
  if (inputs.depth) {
    geom::DepthMap d = *inputs.depth;
    d.intrinsics = session.intrinsics;
    io::write_depth(dir / "inputs" / "depth", d);
  }
  SessionManifest m;
  m.id = std::move(id);
  m.config = config;
  m.created_at = utc_timestamp();
  m.updated_at = m.created_at;
  hash_inputs(dir, m);
  io::write_text(dir / kManifest, json(m).dump(2));
  return out;
}

SessionManifest SessionDir::manifest() const {
  try {
    return json::parse(io::read_text(dir_ / kManifest)).get<SessionManifest>();
  } catch (const json::exception &e) {
    fail(ErrorKind::Io, fmt::format("{}: {}", (dir_ / kManifest).string(), e.what()));
  }
}

void SessionDir::save(const SessionManifest &m) const {
  const SessionManifest old = manifest();
  require(can_transition(old.status, old.iteration, m.status, m.iteration), ErrorKind::ContractViolation,
          fmt::format("session {}: {} -> {} is not a valid transition", m.id, to_string(old.status),
                      to_string(m.status)));
  SessionManifest copy = m;
  copy.updated_at = utc_timestamp();
  io::write_text(dir_ / kManifest, json(copy).dump(2));
}

pipeline::EditSession SessionDir::load_session() const { return pipeline::read_inputs(dir_, manifest().id); }

std::optional<geom::DepthMap> SessionDir::preview_depth() const {
  if (fs::exists(dir_ / "prepare" / "state.json")) {
    return io::read_depth(dir_ / "prepare" / "depth");
  }
  if (fs::exists(dir_ / "inputs" / "depth.f32")) {
    return io::read_depth(dir_ / "inputs" / "depth");
  }
  return std::nullopt;
}

Image SessionDir::preview_background() const {
  if (fs::exists(dir_ / "prepare" / "state.json")) {
    return io::read_image(dir_ / "prepare" / "background.png");
  }
  return io::read_image(dir_ / "inputs" / "image.png");
}

pipeline::EditResult SessionDir::run(oracle::Oracle &oracle) const {
  SessionManifest m = manifest();
  if (m.status != Status::Created) {
    throw Conflict(fmt::format("session {} is {}; only new sessions can run", m.id, to_string(m.status)));
  }
  const pipeline::EditConfig &config = m.config;
  pipeline::RecordingOracle recorder(oracle);
  m.status = Status::Preparing;
  save(m);
  try {
    m.oracle_name = oracle.name();
    pipeline::EditSession session = load_session();
    if (!pipeline::read_prepared(dir_, session)) {
      pipeline::prepare(session, recorder, config);
      pipeline::write_prepared(dir_, session);
    }
    m.status = Status::Iterating;
    m.iteration = 0;
    m.calls = recorder.calls();
    save(m);

    pipeline::EditResult result = pipeline::run_edit(session, recorder, config, [&](const pipeline::IterationTrace &t) {
      pipeline::write_trace(dir_, t);
      m.completed_iterations = t.index + 1;
      m.iteration = std::min(t.index + 1, config.iterations - 1);
      m.calls = recorder.calls();
      save(m);
    });
    io::write_image(dir_ / kOutput, result.image);
    m.status = Status::Done;
    m.calls = recorder.calls();
    save(m);
    return result;
  } catch (const Error &e) {
    record_failure(m, std::string(to_string(e.kind())), e.what());
    m.calls = recorder.calls();
    save(m);
    throw;
  } catch (const std::exception &e) {
    record_failure(m, "internal", e.what());
    m.calls = recorder.calls();
    save(m);
    throw;
  }
}

// ---- SessionStore ----

SessionStore::SessionStore(fs::path root, pipeline::EditConfig defaults, OracleFactory factory)
    : root_(std::move(root)), defaults_(std::move(defaults)), factory_(std::move(factory)) {
  defaults_.validate();
  fs::create_directories(root_);
}

fs::path SessionStore::dir_of(const std::string &id) const {
  if (!valid_session_id(id)) {
    throw NotFound(fmt::format("no session '{}'", id));
  }
  return root_ / id;
}

std::string SessionStore::create(const SessionInputs &inputs, const std::optional<pipeline::EditConfig> &config) {
  std::string id = new_session_id();
  (void)SessionDir::create(dir_of(id), id, inputs, config ? *config : defaults_);
  return id;
}

SessionDir SessionStore::session(const std::string &id) const {
  SessionDir d(dir_of(id));
  if (!d.exists()) {
    throw NotFound(fmt::format("no session '{}'", id));
  }
  return d;
}

SessionManifest SessionStore::manifest(const std::string &id) const { return session(id).manifest(); }

std::vector<SessionManifest> SessionStore::list() const {
  std::vector<SessionManifest> out;
  for (const auto &entry : fs::directory_iterator(root_)) {
    if (!entry.is_directory() || !fs::exists(entry.path() / kManifest)) {
      continue;
    }
    try {
      out.push_back(SessionDir(entry.path()).manifest());
    } catch (const std::exception &e) {
      spdlog::warn("skipping {}: {}", entry.path().string(), e.what());
    }
  }
  std::sort(out.begin(), out.end(), [](const SessionManifest &a, const SessionManifest &b) {
    return std::tie(a.created_at, a.id) < std::tie(b.created_at, b.id);
  });
  return out;
}

void SessionStore::remove(const std::string &id) {
  const std::lock_guard lock(mutex_);
  const SessionDir d = session(id);
  if (running_.contains(id)) {
    throw Conflict(fmt::format("session {} is running", id));
  }
  fs::remove_all(d.path());
}

void SessionStore::begin_run(const std::string &id) {
  const std::lock_guard lock(mutex_);
  const SessionManifest m = manifest(id);
  if (running_.contains(id)) {
    throw Conflict(fmt::format("session {} is already running", id));
  }
  if (m.status != Status::Created) {
    throw Conflict(fmt::format("session {} is {}; only new sessions can run", id, to_string(m.status)));
  }
  running_.insert(id);
}

SessionManifest SessionStore::finish_run(const std::string &id) {
  struct Release {
    SessionStore *store;
    const std::string &id;
    ~Release() {
      const std::lock_guard lock(store->mutex_);
      store->running_.erase(id);
    }
  } release{this, id};

  const SessionDir d = session(id);
  std::unique_ptr<oracle::Oracle> oracle;
  try {
    oracle = factory_(d.manifest().config.oracle);
  } catch (const std::exception &e) {
    SessionManifest m = d.manifest();
    const auto *err = dynamic_cast<const Error *>(&e);
    record_failure(m, err != nullptr ? std::string(to_string(err->kind())) : "internal", e.what());
    d.save(m);
    return m;
  }
  try {
    (void)d.run(*oracle);
  } catch (const std::exception &e) {
    spdlog::warn("session {} failed: {}", id, e.what());
  }
  return d.manifest();
}

SessionManifest SessionStore::run(const std::string &id) {
  begin_run(id);
  return finish_run(id);
}

bool SessionStore::running(const std::string &id) const {
  const std::lock_guard lock(mutex_);
  return running_.contains(id);
}

std::size_t SessionStore::recover() {
  std::size_t n = 0;
  for (SessionManifest m : list()) {
    if (m.status == Status::Preparing || m.status == Status::Iterating) {
      record_failure(m, "interrupted", "the service stopped while this session was running");
      SessionDir(root_ / m.id).save(m);
      ++n;
    }
  }
  return n;
}

// ---- helpers ----

bool valid_session_id(std::string_view id) {
  return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
  });
}

std::string new_session_id() {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  const std::lock_guard lock(mutex);
  return fmt::format("s-{:016x}", rng());
}

std::vector<geom::RigidTransform> chain_steps(const geom::RigidTransform &t, int steps) {
  require(steps >= 1, ErrorKind::InvalidConfig, "chain needs at least one step");
  require(t.scale() > 0.0, ErrorKind::InvalidInput, "chain needs a positive scale");
  const Eigen::AngleAxisd aa(t.rotation());
  const geom::Quat r(Eigen::AngleAxisd(aa.angle() / steps, aa.axis()));
  const double s = std::pow(t.scale(), 1.0 / steps);
  const geom::Vec3 dt = t.translation() / steps;
  std::vector<geom::RigidTransform> out;
  for (int k = 0; k < steps; ++k) {
    // The pivot travels with the object so the increments compose to the full edit.
    std::optional<geom::Vec3> pivot;
    if (t.pivot()) {
      pivot = *t.pivot() + dt * k;
    }
    out.emplace_back(r, dt, pivot, s);
  }
  return out;
}

Mask edited_selection(const pipeline::IterationTrace &trace) {
  return mask::erode(mask::dilate(trace.visible_mask, 1), 1);
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::CapabilityMissing:
  case ErrorKind::OracleTimeout:
  case ErrorKind::OracleTransport:
  case ErrorKind::OracleRequest:
    return 3;
  case ErrorKind::SolverFailure:
  case ErrorKind::Diverged:
  case ErrorKind::InsufficientCorrespondences:
    return 4;
  default:
    return 2;
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  return fmt::format("{:%Y-%m-%dT%H:%M:%S}.{:03d}Z", fmt::gmtime(std::chrono::system_clock::to_time_t(now)), ms);
}

} // namespace edit3d::harness
