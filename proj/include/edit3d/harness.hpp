#pragma once

#include <edit3d/oracle.hpp>
#include <edit3d/pipeline.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace edit3d::harness {

/// Environment variables read by `serve`.
inline constexpr const char *kStorageRootEnv = "EDIT3D_STORAGE_ROOT";
inline constexpr const char *kConfigEnv = "EDIT3D_CONFIG";

enum class Status { Created, Preparing, Iterating, Done, Failed };

[[nodiscard]] std::string_view to_string(Status s);
[[nodiscard]] Status status_from_string(std::string_view s);

/// created -> preparing -> iterating(0..N) -> done | failed; failed is reachable from any
/// non-terminal state. `iteration` only matters for Iterating.
[[nodiscard]] bool can_transition(Status from, int from_iteration, Status to, int to_iteration);

struct SessionManifest {
  std::string id;
  Status status = Status::Created;
  int iteration = 0; // k of iterating(k)
  int completed_iterations = 0;
  std::map<std::string, std::string> input_hashes; // file name -> sha256
  pipeline::EditConfig config;
  std::string oracle_name; // reported by the oracle once a run starts
  std::string created_at;
  std::string updated_at;
  std::vector<pipeline::CallRecord> calls;
  std::string error_code;
  std::string error_message;
};

void to_json(nlohmann::json &j, const SessionManifest &m);
void from_json(const nlohmann::json &j, SessionManifest &m);

/// Unknown session id.
class NotFound : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Session busy, or a run requested in a state that does not allow it.
class Conflict : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using OracleFactory = std::function<std::unique_ptr<oracle::Oracle>(const std::string &spec)>;
/// protocol::make_oracle.
[[nodiscard]] OracleFactory default_oracle_factory();

struct SessionInputs {
  Image image;
  Mask mask;
  geom::RigidTransform transform;
  std::optional<geom::CameraIntrinsics> intrinsics;
  /// Optional user depth; lets preview-warp work before a run.
  std::optional<geom::DepthMap> depth;
};

/// One session directory: inputs/, prepare/, iter_k/, output.png and session.json.
class SessionDir {
public:
  explicit SessionDir(std::filesystem::path dir);

  /// Validates and writes the inputs plus a "created" manifest. Throws Conflict when the
  /// directory already holds a session.
  static SessionDir create(const std::filesystem::path &dir, std::string id, const SessionInputs &inputs,
                           const pipeline::EditConfig &config);

  [[nodiscard]] const std::filesystem::path &path() const noexcept { return dir_; }
  [[nodiscard]] bool exists() const;
  [[nodiscard]] SessionManifest manifest() const;
  /// Enforces the status state machine.
  void save(const SessionManifest &m) const;

  /// prepare + run_edit, persisting every phase. Errors are recorded in the manifest and rethrown.
  pipeline::EditResult run(oracle::Oracle &oracle) const;

  [[nodiscard]] pipeline::EditSession load_session() const;
  /// Depth for geometry previews: the prepared estimate, else the depth given at creation.
  [[nodiscard]] std::optional<geom::DepthMap> preview_depth() const;
  /// Background for previews: the completed layer once prepared, else the source image.
  [[nodiscard]] Image preview_background() const;

private:
  std::filesystem::path dir_;
};

/// Sessions under one storage root, one sub-directory each.
class SessionStore {
public:
  explicit SessionStore(std::filesystem::path root, pipeline::EditConfig defaults = {},
                        OracleFactory factory = default_oracle_factory());

  [[nodiscard]] const std::filesystem::path &root() const noexcept { return root_; }
  [[nodiscard]] const pipeline::EditConfig &defaults() const noexcept { return defaults_; }

  /// Missing config uses the store defaults.
  std::string create(const SessionInputs &inputs, const std::optional<pipeline::EditConfig> &config = std::nullopt);
  [[nodiscard]] SessionManifest manifest(const std::string &id) const;
  [[nodiscard]] std::vector<SessionManifest> list() const;
  [[nodiscard]] SessionDir session(const std::string &id) const;
  /// Throws Conflict while the session runs.
  void remove(const std::string &id);

  /// Marks the session running; throws Conflict if it already is or cannot run.
  void begin_run(const std::string &id);
  /// Runs a session reserved with begin_run and releases it. Returns the final manifest;
  /// failures are recorded there rather than thrown.
  SessionManifest finish_run(const std::string &id);
  /// begin_run + finish_run.
  SessionManifest run(const std::string &id);
  [[nodiscard]] bool running(const std::string &id) const;

  /// Sessions left preparing/iterating by a previous process are marked failed.
  std::size_t recover();

private:
  [[nodiscard]] std::filesystem::path dir_of(const std::string &id) const;

  std::filesystem::path root_;
  pipeline::EditConfig defaults_;
  OracleFactory factory_;
  mutable std::mutex mutex_;
  std::set<std::string> running_;
};

/// True when `id` is safe as a directory name.
[[nodiscard]] bool valid_session_id(std::string_view id);
[[nodiscard]] std::string new_session_id();

/// Splits an edit into `steps` equal increments whose composition is the edit.
/// An unresolved pivot stays unresolved in every step.
[[nodiscard]] std::vector<geom::RigidTransform> chain_steps(const geom::RigidTransform &t, int steps);

/// Object mask in the edited frame, used as the selection for the next chained step.
[[nodiscard]] Mask edited_selection(const pipeline::IterationTrace &trace);

/// 0 ok, 2 validation, 3 oracle, 4 solver.
[[nodiscard]] int exit_code_for(ErrorKind kind);

[[nodiscard]] std::string utc_timestamp();

} // namespace edit3d::harness
