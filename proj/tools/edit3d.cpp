// edit3d: batch edits, the session service and a standalone oracle server.

#include <edit3d/harness.hpp>
#include <edit3d/io.hpp>
#include <edit3d/mock_oracles.hpp>
#include <edit3d/protocol.hpp>
#include <edit3d/service.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace edit3d;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct EditFlags {
  std::string image;
  std::string mask;
  std::string transform;
  std::string intrinsics;
  std::string oracle;
  std::string out;
  std::string config;
  std::string sigma;
  int iterations = 0;
  int stride = 0;
  double stretch_threshold = 0.0;
  double lambda = -1.0;
  std::optional<std::uint64_t> seed;
  std::string prompt;
  int chain = 1;
};

struct ServeFlags {
  std::string root;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string config;
};

struct OracleFlags {
  std::string oracle = "mock:identity";
  std::string host = "127.0.0.1";
  int port = 8090;
};

struct SceneFlags {
  std::string scene;
  std::string out;
};

json read_json(const fs::path &path) {
  try {
    return json::parse(io::read_text(path));
  } catch (const json::exception &e) {
    fail(ErrorKind::InvalidInput, fmt::format("{}: {}", path.string(), e.what()));
  }
}

pipeline::EditConfig load_config(const std::string &path) {
  pipeline::EditConfig c;
  if (!path.empty()) {
    pipeline::from_json(read_json(path), c);
  }
  return c;
}

pipeline::EditConfig edit_config(const EditFlags &f) {
  pipeline::EditConfig c = load_config(f.config);
  if (!f.sigma.empty()) {
    c.sigma_schedule = pipeline::parse_schedule(f.sigma);
    c.iterations = static_cast<int>(c.sigma_schedule.size());
  }
  if (f.iterations > 0) {
    c.iterations = f.iterations;
  }
  if (f.stride > 0) {
    c.correspondence_stride = f.stride;
  }
  if (f.stretch_threshold > 0.0) {
    c.stretch_threshold = f.stretch_threshold;
  }
  if (f.lambda >= 0.0) {
    c.solver.lambda = f.lambda;
  }
  if (f.seed) {
    c.seed = *f.seed;
  }
  if (!f.oracle.empty()) {
    c.oracle = f.oracle;
  }
  if (!f.prompt.empty()) {
    c.prompt = f.prompt;
  }
  c.validate();
  return c;
}

std::string session_id_for(const fs::path &out) {
  const std::string name = out.filename().string();
  return harness::valid_session_id(name) ? name : harness::new_session_id();
}

int run_edit(const EditFlags &f) {
  const pipeline::EditConfig config = edit_config(f);
  harness::SessionInputs inputs;
  inputs.image = io::read_image(f.image);
  inputs.mask = io::read_mask(f.mask);
  geom::from_json(read_json(f.transform), inputs.transform);
  if (!f.intrinsics.empty()) {
    geom::CameraIntrinsics k;
    geom::from_json(read_json(f.intrinsics), k);
    inputs.intrinsics = k;
  }
  const fs::path out = fs::path(f.out).lexically_normal();
  const std::unique_ptr<oracle::Oracle> oracle = protocol::make_oracle(config.oracle);

  if (f.chain <= 1) {
    const harness::SessionDir dir = harness::SessionDir::create(out, session_id_for(out), inputs, config);
    (void)dir.run(*oracle);
    fmt::print("done: {} ({} iterations)\n", (out / "output.png").string(), config.iterations);
    return 0;
  }

  // Small increments, each output feeding the next step with freshly estimated depth.
  const auto steps = harness::chain_steps(inputs.transform, f.chain);
  json chain = json::array();
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const fs::path step_dir = out / fmt::format("step_{}", k);
    harness::SessionInputs step = inputs;
    step.transform = steps[k];
    const harness::SessionDir dir = harness::SessionDir::create(step_dir, harness::new_session_id(), step, config);
    const pipeline::EditResult result = dir.run(*oracle);
    inputs.image = result.image;
    inputs.mask = harness::edited_selection(result.traces.back());
    chain.push_back({{"step", k}, {"session", step_dir.filename().string()}});
    fmt::print("step {}/{} done\n", k + 1, steps.size());
  }
  io::write_image(out / "output.png", inputs.image);
  io::write_text(out / "chain.json", json{{"steps", chain}}.dump(2));
  fmt::print("done: {} ({} chained steps)\n", (out / "output.png").string(), steps.size());
  return 0;
}

sigset_t block_termination_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_signal(const sigset_t &set) {
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("received signal {}, shutting down", sig);
}

int run_serve(ServeFlags f) {
  if (f.root.empty()) {
    const char *env = std::getenv(harness::kStorageRootEnv);
    require(env != nullptr && *env != '\0', ErrorKind::InvalidConfig,
            fmt::format("--root or {} must name the storage directory", harness::kStorageRootEnv));
    f.root = env;
  }
  if (f.config.empty()) {
    const char *env = std::getenv(harness::kConfigEnv);
    f.config = env != nullptr ? env : "";
  }
  const sigset_t signals = block_termination_signals();
  harness::SessionStore store(f.root, load_config(f.config));
  if (const std::size_t n = store.recover(); n > 0) {
    spdlog::warn("marked {} interrupted sessions as failed", n);
  }
  harness::Service service(store, f.host, f.port);
  fmt::print("listening on http://{}:{}\n", f.host, service.port());
  std::fflush(stdout);
  wait_for_signal(signals);
  service.stop();
  return 0;
}

int run_oracle_serve(const OracleFlags &f) {
  const sigset_t signals = block_termination_signals();
  const std::unique_ptr<oracle::Oracle> oracle = protocol::make_oracle(f.oracle);
  protocol::OracleServer server(*oracle, f.host, f.port);
  fmt::print("{} oracle on http://{}:{}\n", oracle->name(), f.host, server.port());
  std::fflush(stdout);
  wait_for_signal(signals);
  server.stop();
  return 0;
}

int run_render_scene(const SceneFlags &f) {
  const oracle::scene::Config config = oracle::scene::load(f.scene);
  const oracle::MockSceneOracle mock(config);
  const fs::path out(f.out);
  fs::create_directories(out);
  io::write_image(out / "image.png", mock.source().image);
  io::write_mask(out / "mask.png", mock.source().object_mask);
  io::write_image(out / "target.png", mock.edited().image);
  io::write_depth(out / "depth", geom::DepthMap(mock.source().depth, config.camera));
  json t;
  geom::to_json(t, config.edit);
  io::write_text(out / "transform.json", t.dump(2));
  json k;
  geom::to_json(k, config.camera);
  io::write_text(out / "intrinsics.json", k.dump(2));
  fmt::print("wrote image.png, mask.png, transform.json, intrinsics.json, target.png and depth to {}\n", out.string());
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("edit3d"));
  CLI::App app{"3D-aware object edits driven by generative oracles"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  EditFlags edit;
  CLI::App *edit_cmd = app.add_subcommand("edit", "run one edit and write its session directory");
  edit_cmd->add_option("--image", edit.image, "source image (PNG)")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--mask", edit.mask, "selection mask (PNG)")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--transform", edit.transform, "edit transform (JSON)")->required()->check(CLI::ExistingFile);
  edit_cmd->add_option("--intrinsics", edit.intrinsics, "camera intrinsics (JSON)")->check(CLI::ExistingFile);
  edit_cmd->add_option("--oracle", edit.oracle, "mock:identity, mock:<scene.json> or http://host:port");
  edit_cmd->add_option("--out", edit.out, "session directory to create")->required();
  edit_cmd->add_option("--config", edit.config, "EditConfig JSON; flags override it")->check(CLI::ExistingFile);
  edit_cmd->add_option("--sigma", edit.sigma, "noise schedule, e.g. 0.5,0.4,0.3");
  edit_cmd->add_option("--iterations", edit.iterations, "iterations (must match the schedule length)")
      ->check(CLI::PositiveNumber);
  edit_cmd->add_option("--stride", edit.stride, "correspondence stride")->check(CLI::PositiveNumber);
  edit_cmd->add_option("--stretch-threshold", edit.stretch_threshold, "stretch ratio above which pixels are inpainted");
  edit_cmd->add_option("--lambda", edit.lambda, "depth regularisation weight")->check(CLI::NonNegativeNumber);
  edit_cmd->add_option("--seed", edit.seed, "seed forwarded to the oracle");
  edit_cmd->add_option("--prompt", edit.prompt, "inpainting prompt");
  edit_cmd->add_option("--chain", edit.chain, "split the edit into N chained steps")->check(CLI::PositiveNumber);

  ServeFlags serve;
  CLI::App *serve_cmd = app.add_subcommand("serve", "run the session REST service");
  serve_cmd->add_option("--root", serve.root, fmt::format("storage root (default ${})", harness::kStorageRootEnv));
  serve_cmd->add_option("--host", serve.host, "bind address");
  serve_cmd->add_option("--port", serve.port, "port, 0 for any")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--config", serve.config, fmt::format("default EditConfig JSON (default ${})",
                                                             harness::kConfigEnv))
      ->check(CLI::ExistingFile);

  OracleFlags oracle_flags;
  CLI::App *oracle_cmd = app.add_subcommand("oracle-serve", "serve a mock oracle over HTTP");
  oracle_cmd->add_option("--oracle", oracle_flags.oracle, "mock:identity or mock:<scene.json>");
  oracle_cmd->add_option("--host", oracle_flags.host, "bind address");
  oracle_cmd->add_option("--port", oracle_flags.port, "port, 0 for any")->check(CLI::Range(0, 65535));

  SceneFlags scene;
  CLI::App *scene_cmd = app.add_subcommand("render-scene", "write inputs and ground truth for a mock scene");
  scene_cmd->add_option("--scene", scene.scene, "scene JSON")->required()->check(CLI::ExistingFile);
  scene_cmd->add_option("--out", scene.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    (void)app.exit(e);
    return 2;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (edit_cmd->parsed()) {
      return run_edit(edit);
    }
    if (serve_cmd->parsed()) {
      return run_serve(serve);
    }
    if (oracle_cmd->parsed()) {
      return run_oracle_serve(oracle_flags);
    }
    return run_render_scene(scene);
  } catch (const Error &e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return harness::exit_code_for(e.kind());
  } catch (const harness::Conflict &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
