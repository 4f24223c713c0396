#include <edit3d/io.hpp>
#include <edit3d/service.hpp>
#include <edit3d/warp.hpp>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <map>
#include <set>
#include <thread>

namespace edit3d::harness {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

const std::set<std::string> kIterationArtifacts{
    "warped.png",      "synth.png",      "undistorted.png", "visible.png",         "inpaint.png",
    "depth_pre.f32",   "depth_pre.json", "depth_post.f32",  "depth_post.json",     "correspondences.csv",
    "warp_pairs.csv",  "metrics.json"};

const std::set<std::string> kInputFiles{"image.png", "mask.png", "transform.json", "intrinsics.json", "depth.f32",
                                        "depth.json"};

std::string content_type(const fs::path &p) {
  const std::string ext = p.extension().string();
  if (ext == ".png") {
    return "image/png";
  }
  if (ext == ".json") {
    return "application/json";
  }
  if (ext == ".csv") {
    return "text/csv";
  }
  return "application/octet-stream";
}

void send_error(httplib::Response &res, int status, std::string_view code, std::string_view message) {
  res.status = status;
  res.set_content(json{{"error", {{"code", code}, {"message", message}}}}.dump(), "application/json");
}

void send_json(httplib::Response &res, int status, const json &body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F> void guarded(httplib::Response &res, F &&f) {
  try {
    f();
  } catch (const NotFound &e) {
    send_error(res, 404, "not_found", e.what());
  } catch (const Conflict &e) {
    send_error(res, 409, "conflict", e.what());
  } catch (const Error &e) {
    const int status = e.is_oracle_error() ? 502 : (e.kind() == ErrorKind::Io ? 500 : 422);
    send_error(res, status, to_string(e.kind()), e.what());
  } catch (const json::exception &e) {
    send_error(res, 422, "invalid_input", e.what());
  } catch (const std::exception &e) {
    send_error(res, 500, "internal", e.what());
  }
}

void send_file(httplib::Response &res, const fs::path &path) {
  if (!fs::exists(path)) {
    throw NotFound(fmt::format("{} has not been written", path.filename().string()));
  }
  const io::Bytes bytes = io::read_file(path);
  res.status = 200;
  res.set_content(reinterpret_cast<const char *>(bytes.data()), bytes.size(), content_type(path));
}

SessionInputs parse_inputs(const json &j) {
  require(j.is_object(), ErrorKind::InvalidInput, "request body must be a JSON object");
  SessionInputs in;
  in.image = io::decode_png_image(io::base64_decode(j.at("image").get<std::string>()));
  in.mask = io::decode_png_mask(io::base64_decode(j.at("mask").get<std::string>()));
  geom::from_json(j.at("transform"), in.transform);
  if (j.contains("intrinsics") && !j.at("intrinsics").is_null()) {
    geom::CameraIntrinsics k;
    geom::from_json(j.at("intrinsics"), k);
    in.intrinsics = k;
  }
  if (j.contains("depth") && !j.at("depth").is_null()) {
    // Intrinsics are filled in when the session is written.
    geom::DepthMap d;
    d.values = io::to_grid(io::field_from_json(j.at("depth")));
    in.depth = std::move(d);
  }
  return in;
}

/// Everything a preview needs that does not depend on the transform.
struct PreviewGeometry {
  warp::TexturedDepthMesh mesh;
  Image background;
  geom::Vec3 centroid;
  geom::CameraIntrinsics intrinsics;
  warp::RasterConfig raster;
  bool prepared = false;
};

} // namespace

struct Service::Impl {
  SessionStore &store;
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::mutex join_mutex;

  std::mutex workers_mutex;
  std::vector<std::thread> workers;

  std::mutex cache_mutex;
  std::map<std::string, std::shared_ptr<const PreviewGeometry>> cache;

  explicit Impl(SessionStore &s) : store(s) {}

  std::shared_ptr<const PreviewGeometry> preview_geometry(const std::string &id) {
    const SessionDir dir = store.session(id);
    const bool prepared = fs::exists(dir.path() / "prepare" / "state.json");
    {
      const std::lock_guard lock(cache_mutex);
      const auto it = cache.find(id);
      if (it != cache.end() && it->second->prepared == prepared) {
        return it->second;
      }
    }
    const std::optional<geom::DepthMap> depth = dir.preview_depth();
    if (!depth) {
      throw Conflict(fmt::format("session {} has no depth yet; create it with a depth map or run it first", id));
    }
    const pipeline::EditSession session = dir.load_session();
    const SessionManifest m = dir.manifest();
    auto geo = std::make_shared<PreviewGeometry>();
    geo->mesh = warp::lift_to_mesh(session.source, session.selection, *depth, m.config.mesh);
    geo->background = dir.preview_background();
    geo->centroid = geom::selection_centroid(*depth, session.selection);
    geo->intrinsics = session.intrinsics;
    geo->raster = m.config.raster;
    geo->prepared = prepared;
    const std::lock_guard lock(cache_mutex);
    cache[id] = geo;
    return geo;
  }

  void forget(const std::string &id) {
    const std::lock_guard lock(cache_mutex);
    cache.erase(id);
  }

  void routes() {
    server.Get("/health", [](const httplib::Request &, httplib::Response &res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    server.Get("/sessions", [this](const httplib::Request &, httplib::Response &res) {
      guarded(res, [&] {
        json list = json::array();
        for (const auto &m : store.list()) {
          list.push_back(m);
        }
        send_json(res, 200, {{"sessions", list}});
      });
    });

    server.Post("/sessions", [this](const httplib::Request &req, httplib::Response &res) {
      guarded(res, [&] {
        const json body = json::parse(req.body);
        const SessionInputs inputs = parse_inputs(body);
        std::optional<pipeline::EditConfig> config;
        if (body.contains("config") && !body.at("config").is_null()) {
          config = store.defaults();
          pipeline::from_json(body.at("config"), *config);
        }
        const std::string id = store.create(inputs, config);
        send_json(res, 201, store.manifest(id));
      });
    });

    server.Get(R"(/sessions/([A-Za-z0-9_-]+))", [this](const httplib::Request &req, httplib::Response &res) {
      guarded(res, [&] { send_json(res, 200, store.manifest(req.matches[1])); });
    });

    server.Delete(R"(/sessions/([A-Za-z0-9_-]+))", [this](const httplib::Request &req, httplib::Response &res) {
      guarded(res, [&] {
        store.remove(req.matches[1]);
        forget(req.matches[1]);
        res.status = 204;
      });
    });

    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/run)", [this](const httplib::Request &req, httplib::Response &res) {
      guarded(res, [&] {
        const std::string id = req.matches[1];
        store.begin_run(id);
        const std::string wait = req.get_param_value("wait");
        if (wait == "1" || wait == "true") {
          send_json(res, 200, store.finish_run(id));
          return;
        }
        const std::lock_guard lock(workers_mutex);
        workers.emplace_back([this, id] { (void)store.finish_run(id); });
        send_json(res, 202, store.manifest(id));
      });
    });

    server.Post(R"(/sessions/([A-Za-z0-9_-]+)/preview-warp)",
                [this](const httplib::Request &req, httplib::Response &res) {
                  guarded(res, [&] {
                    const json body = json::parse(req.body);
                    geom::RigidTransform t;
                    geom::from_json(body.at("transform"), t);
                    const auto geo = preview_geometry(req.matches[1]);
                    const warp::WarpResult w =
                        warp::rasterize(geo->mesh, t.resolved(geo->centroid), geo->intrinsics, geo->raster);
                    const io::Bytes png = io::encode_png(warp::composite_over(w, geo->background), 8);
                    res.status = 200;
                    res.set_header("X-Visible-Pixels", std::to_string(mask::count(w.visible_mask)));
                    res.set_content(reinterpret_cast<const char *>(png.data()), png.size(), "image/png");
                  });
                });

    server.Get(R"(/sessions/([A-Za-z0-9_-]+)/iter/(\d+)/([A-Za-z0-9_.]+))",
               [this](const httplib::Request &req, httplib::Response &res) {
                 guarded(res, [&] {
                   const SessionDir dir = store.session(req.matches[1]);
                   const std::string artifact = req.matches[3];
                   if (!kIterationArtifacts.contains(artifact)) {
                     throw NotFound(fmt::format("unknown artifact '{}'", artifact));
                   }
                   send_file(res, pipeline::iteration_dir(dir.path(), std::stoi(req.matches[2])) / artifact);
                 });
               });

    server.Get(R"(/sessions/([A-Za-z0-9_-]+)/inputs/([A-Za-z0-9_.]+))",
               [this](const httplib::Request &req, httplib::Response &res) {
                 guarded(res, [&] {
                   const SessionDir dir = store.session(req.matches[1]);
                   const std::string file = req.matches[2];
                   if (!kInputFiles.contains(file)) {
                     throw NotFound(fmt::format("unknown input '{}'", file));
                   }
                   send_file(res, dir.path() / "inputs" / file);
                 });
               });

    server.Get(R"(/sessions/([A-Za-z0-9_-]+)/output)", [this](const httplib::Request &req, httplib::Response &res) {
      guarded(res, [&] { send_file(res, store.session(req.matches[1]).path() / "output.png"); });
    });
  }
};

Service::Service(SessionStore &store, const std::string &host, int port) : impl_(std::make_unique<Impl>(store)) {
  impl_->routes();
  impl_->port = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  require(impl_->port > 0, ErrorKind::Io, fmt::format("cannot bind session service to {}:{}", host, port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  spdlog::info("session service on {}:{} storing under {}", host, impl_->port, store.root().string());
}

Service::~Service() { stop(); }

int Service::port() const noexcept { return impl_->port; }

void Service::stop() {
  impl_->server.stop();
  wait();
  std::vector<std::thread> workers;
  {
    const std::lock_guard lock(impl_->workers_mutex);
    workers.swap(impl_->workers);
  }
  for (auto &w : workers) {
    w.join();
  }
}

void Service::wait() {
  const std::lock_guard lock(impl_->join_mutex);
  if (impl_->thread.joinable()) {
    impl_->thread.join();
  }
}

} // namespace edit3d::harness
