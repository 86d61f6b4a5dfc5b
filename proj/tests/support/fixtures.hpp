#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "tes/json.hpp"
#include "tes/model.hpp"
#include "tes/runtime.hpp"
#include "tes/service.hpp"
#include "tes/staging.hpp"
#include "tes/store.hpp"
#include "tes/worker.hpp"

namespace tes::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, const std::string& content);
std::string read_file(const fs::path& p);
std::string sha256_hex(const std::string& data);

/// Byte pattern used wherever tests need recognizable content.
std::string pattern_bytes(std::size_t n, unsigned seed = 0);

/// Serves registered bodies on GET and records PUT bodies, over plain HTTP
/// or TLS with a throwaway self-signed certificate.
class BlobServer {
 public:
  explicit BlobServer(bool tls = false);
  ~BlobServer();

  void put_blob(const std::string& path, std::string body);
  std::optional<std::string> uploaded(const std::string& path) const;
  std::map<std::string, std::string> uploads() const;
  /// The next `n` requests are answered with HTTP 500.
  void fail_next(int n);
  int request_count() const;

  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// A canned HTTP server: every request is answered by `handler`.
class ScriptedServer {
 public:
  struct Reply {
    int status = 200;
    json body;
  };
  using Handler = std::function<Reply(const std::string& method, const std::string& path)>;

  explicit ScriptedServer(Handler handler);
  ~ScriptedServer();

  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Reverse proxy to a TES server that rewrites the "state" field of
/// single-task GET responses from `from` to `to`.
class StateRewritingProxy {
 public:
  StateRewritingProxy(std::string upstream_base_url, std::string from, std::string to);
  ~StateRewritingProxy();

  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct LocalServerOptions {
  WorkerConfig worker;
  ServiceConfig service;
  std::shared_ptr<ProtocolRegistry> registry;
  bool start_worker = true;
};

/// Store, worker (direct-process runtime) and HTTP service on an ephemeral
/// loopback port.
class LocalServer {
 public:
  explicit LocalServer(LocalServerOptions options = {});
  ~LocalServer();

  TaskStore& store() { return *store_; }
  Worker& worker() { return *worker_; }
  std::string base_url() const { return service_->base_url(); }
  /// Scheme, host and port only.
  std::string origin() const { return "http://127.0.0.1:" + std::to_string(service_->port()); }

 private:
  TempDir sandboxes_;
  std::unique_ptr<TaskStore> store_;
  std::shared_ptr<ProtocolRegistry> registry_;
  std::unique_ptr<Worker> worker_;
  std::unique_ptr<TesService> service_;
};

/// Protocol handler stub that advertises a scheme and accepts every transfer.
class StubHandler : public ProtocolHandler {
 public:
  explicit StubHandler(std::string scheme) : scheme_(std::move(scheme)) {}
  std::string scheme() const override { return scheme_; }
  std::uint64_t fetch(const StorageUrl&, const fs::path& dest, FileType) override;
  std::uint64_t put(const fs::path& src, const StorageUrl&) override;

 private:
  std::string scheme_;
};

struct HttpReply {
  int status = 0;  // 0 when the request could not be sent
  std::string body;
  json parsed() const { return json::parse(body); }
};

/// One raw request; `target` is the path plus query string.
HttpReply http_call(const std::string& base_url, const std::string& method,
                    const std::string& target, const std::string& body = "",
                    const std::map<std::string, std::string>& headers = {});

TaskSpec shell_task(const std::string& script, std::optional<std::string> name = std::nullopt);

/// Polls the store until `id` is terminal or the deadline passes.
std::optional<TaskState> wait_terminal(const TaskStore& store, const std::string& id,
                                       std::chrono::milliseconds timeout);

/// True when some process command line contains `needle`.
bool process_with_cmdline_exists(const std::string& needle);

/// Walks the audit log and checks every recorded edge is valid and that each
/// task's transitions chain from QUEUED. Returns a description of the first
/// violation, empty when none.
std::string audit_transitions(const std::vector<Transition>& transitions);

}  // namespace tes::testing
