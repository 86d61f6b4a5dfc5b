#pragma once

#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "tes/json.hpp"
#include "tes/staging.hpp"
#include "tes/store.hpp"
#include "tes/worker.hpp"

namespace httplib {
class Server;
}

namespace tes {

inline constexpr const char* kTesApiVersion = "1.1.0";
inline constexpr const char* kImplementationVersion = "0.1.0";

struct ServiceConfig {
  std::string host = "127.0.0.1";
  /// 0 binds an ephemeral port.
  int port = 8000;
  /// Either empty or e.g. "/ga4gh/tes/v1".
  std::string path_prefix;
  /// When set, every request must carry "Authorization: Bearer <token>".
  std::optional<std::string> bearer_token;
  std::string id = "org.example.tes";
  std::string name = "tes-cpp";
  std::string description = "Task Execution Service";
};

/// HTTP front end for the five TES endpoints.
class TesService {
 public:
  TesService(TaskStore& store, Worker& worker,
             std::shared_ptr<const ProtocolRegistry> registry, ServiceConfig config);
  ~TesService();

  TesService(const TesService&) = delete;
  TesService& operator=(const TesService&) = delete;

  json service_info() const;

  /// Binds and serves on a background thread. Returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();

  int port() const { return port_; }
  std::string base_url() const;

 private:
  void install_routes();
  int bind();

  TaskStore& store_;
  Worker& worker_;
  std::shared_ptr<const ProtocolRegistry> registry_;
  ServiceConfig config_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace tes
