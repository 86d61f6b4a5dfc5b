#include <CLI11.hpp>

#include <csignal>
#include <iostream>

#include "tes/error.hpp"
#include "tes/runtime.hpp"
#include "tes/service.hpp"
#include "tes/staging.hpp"
#include "tes/store.hpp"
#include "tes/worker.hpp"

namespace {

tes::TesService* g_service = nullptr;

void handle_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GA4GH Task Execution Service server", "tes-server"};
  app.set_config("--config", "", "TOML/INI configuration file");

  tes::ServiceConfig service;
  tes::WorkerConfig worker;
  tes::StoreOptions store_options;
  std::string runtime = "direct";
  std::string container_binary = "docker";
  std::string journal;
  std::string bearer;
  std::string sandbox_dir = worker.sandbox_parent.string();
  bool use_prefix = false;

  app.add_option("--host", service.host, "Listen address")->capture_default_str();
  app.add_option("--port", service.port, "Listen port (0 = ephemeral)")->capture_default_str();
  app.add_flag("--ga4gh-prefix", use_prefix, "Serve under /ga4gh/tes/v1");
  app.add_option("--bearer-token", bearer, "Require this bearer token on every request");
  app.add_option("--workers", worker.pool_size, "Concurrent task limit")->capture_default_str();
  app.add_option("--cpu-cores", worker.total_cpu_cores, "Schedulable cores")->capture_default_str();
  app.add_option("--ram-gb", worker.total_ram_gb, "Schedulable memory in GB")->capture_default_str();
  app.add_option("--sandbox-dir", sandbox_dir, "Parent directory of task sandboxes")
      ->capture_default_str();
  app.add_option("--capture-limit", worker.capture_limit, "Bytes of stdout/stderr kept per executor")
      ->capture_default_str();
  app.add_flag("--retain-sandboxes", worker.retain_sandboxes, "Keep sandboxes for debugging");
  app.add_option("--runtime", runtime, "direct or container")
      ->check(CLI::IsMember({"direct", "container"}))
      ->capture_default_str();
  app.add_option("--container-binary", container_binary, "Container CLI for --runtime container")
      ->capture_default_str();
  app.add_option("--journal", journal, "Append-only task journal (replayed on start)");
  CLI11_PARSE(app, argc, argv);

  if (use_prefix) service.path_prefix = "/ga4gh/tes/v1";
  if (!bearer.empty()) service.bearer_token = bearer;
  if (!journal.empty()) store_options.journal_path = journal;
  store_options.capture_limit = worker.capture_limit;
  worker.sandbox_parent = sandbox_dir;

  try {
    tes::TaskStore store(store_options);
    auto registry =
        std::make_shared<tes::ProtocolRegistry>(tes::ProtocolRegistry::with_default_handlers());
    std::shared_ptr<tes::RuntimeAdapter> adapter;
    if (runtime == "container") {
      adapter = std::make_shared<tes::ContainerAdapter>(container_binary);
    } else {
      adapter = std::make_shared<tes::DirectProcessAdapter>();
    }
    tes::Worker pool(store, registry, adapter, worker);
    tes::TesService server(store, pool, registry, service);
    g_service = &server;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);

    pool.start();
    std::cout << "tes-server listening on http://" << service.host << ":" << service.port
              << service.path_prefix << " (runtime " << adapter->name() << ")" << std::endl;
    server.run();
    g_service = nullptr;
    pool.stop();
  } catch (const tes::Error& e) {
    std::cerr << "tes-server: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
