#pragma once

#include <edit3d/harness.hpp>

#include <memory>
#include <string>

namespace edit3d::harness {

/// REST front end of a SessionStore.
///
///   GET    /health
///   GET    /sessions
///   POST   /sessions                          {image, mask, transform, intrinsics?, config?, depth?}
///   GET    /sessions/{id}                     manifest
///   DELETE /sessions/{id}
///   POST   /sessions/{id}/run[?wait=1]        202, or 200 with the final manifest when waiting
///   POST   /sessions/{id}/preview-warp        {transform} -> image/png, no oracle calls
///   GET    /sessions/{id}/iter/{k}/{artifact}
///   GET    /sessions/{id}/inputs/{file}
///   GET    /sessions/{id}/output
///
/// Images travel as base64 PNG, depth as the f32le field object of the oracle protocol.
/// Errors are {"error": {"code", "message"}} with 404, 409 or 422.
class Service {
public:
  Service(SessionStore &store, const std::string &host, int port);
  ~Service();
  Service(const Service &) = delete;
  Service &operator=(const Service &) = delete;

  [[nodiscard]] int port() const noexcept;
  /// Stops listening and waits for background runs.
  void stop();
  /// Blocks until stop() is called from elsewhere.
  void wait();

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace edit3d::harness
