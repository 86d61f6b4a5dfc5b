#include "fixtures.hpp"

#include <httplib.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/x509.h>

#include <atomic>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace tes::testing {

TempDir::TempDir() {
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  path_ = fs::temp_directory_path() /
          ("tes-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string pattern_bytes(std::size_t n, unsigned seed) {
  std::string s(n, '\0');
  for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<char>((i * 31 + seed) % 251);
  return s;
}

namespace {

/// Writes a fresh self-signed certificate for 127.0.0.1 and its key.
void make_self_signed(const fs::path& cert_path, const fs::path& key_path) {
  EVP_PKEY* key = EVP_RSA_gen(2048);
  X509* cert = X509_new();
  ASN1_INTEGER_set(X509_get_serialNumber(cert), 1);
  X509_gmtime_adj(X509_getm_notBefore(cert), 0);
  X509_gmtime_adj(X509_getm_notAfter(cert), 3600);
  X509_set_pubkey(cert, key);
  X509_NAME* name = X509_get_subject_name(cert);
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC,
                             reinterpret_cast<const unsigned char*>("127.0.0.1"), -1, -1, 0);
  X509_set_issuer_name(cert, name);
  X509_sign(cert, key, EVP_sha256());

  FILE* f = std::fopen(cert_path.c_str(), "wb");
  PEM_write_X509(f, cert);
  std::fclose(f);
  f = std::fopen(key_path.c_str(), "wb");
  PEM_write_PrivateKey(f, key, nullptr, nullptr, 0, nullptr, nullptr);
  std::fclose(f);
  X509_free(cert);
  EVP_PKEY_free(key);
}

/// Runs an httplib server on a background thread bound to an ephemeral port.
struct Running {
  std::unique_ptr<httplib::Server> server;
  std::thread thread;
  int port = -1;

  void start() {
    port = server->bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server->listen_after_bind(); });
    server->wait_until_ready();
  }
  ~Running() {
    if (server) server->stop();
    if (thread.joinable()) thread.join();
  }
};

}  // namespace

struct BlobServer::Impl {
  TempDir certs;
  bool tls = false;
  mutable std::mutex mutex;
  std::map<std::string, std::string> blobs;
  std::map<std::string, std::string> uploads;
  int failures_left = 0;
  int requests = 0;
  Running running;

  bool should_fail() {
    std::lock_guard lock(mutex);
    ++requests;
    if (failures_left > 0) {
      --failures_left;
      return true;
    }
    return false;
  }
};

BlobServer::BlobServer(bool tls) : impl_(std::make_unique<Impl>()) {
  impl_->tls = tls;
  if (tls) {
    const auto cert = impl_->certs / "cert.pem";
    const auto key = impl_->certs / "key.pem";
    make_self_signed(cert, key);
    impl_->running.server = std::make_unique<httplib::SSLServer>(cert.c_str(), key.c_str());
  } else {
    impl_->running.server = std::make_unique<httplib::Server>();
  }
  auto* impl = impl_.get();
  impl->running.server->Get(".*", [impl](const httplib::Request& req, httplib::Response& res) {
    if (impl->should_fail()) {
      res.status = 500;
      return;
    }
    std::lock_guard lock(impl->mutex);
    auto it = impl->blobs.find(req.path);
    if (it == impl->blobs.end()) {
      res.status = 404;
      return;
    }
    res.set_content(it->second, "application/octet-stream");
  });
  impl->running.server->Put(".*", [impl](const httplib::Request& req, httplib::Response& res) {
    if (impl->should_fail()) {
      res.status = 500;
      return;
    }
    std::lock_guard lock(impl->mutex);
    impl->uploads[req.path] = req.body;
    res.status = 201;
  });
  impl_->running.start();
}

BlobServer::~BlobServer() = default;

void BlobServer::put_blob(const std::string& path, std::string body) {
  std::lock_guard lock(impl_->mutex);
  impl_->blobs[path] = std::move(body);
}

std::optional<std::string> BlobServer::uploaded(const std::string& path) const {
  std::lock_guard lock(impl_->mutex);
  auto it = impl_->uploads.find(path);
  if (it == impl_->uploads.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, std::string> BlobServer::uploads() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->uploads;
}

void BlobServer::fail_next(int n) {
  std::lock_guard lock(impl_->mutex);
  impl_->failures_left = n;
}

int BlobServer::request_count() const {
  std::lock_guard lock(impl_->mutex);
  return impl_->requests;
}

std::string BlobServer::base_url() const {
  return std::string(impl_->tls ? "https" : "http") + "://127.0.0.1:" +
         std::to_string(impl_->running.port);
}

struct ScriptedServer::Impl {
  Running running;
};

ScriptedServer::ScriptedServer(Handler handler) : impl_(std::make_unique<Impl>()) {
  impl_->running.server = std::make_unique<httplib::Server>();
  auto respond = [handler](const httplib::Request& req, httplib::Response& res) {
    const Reply reply = handler(req.method, req.path);
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  impl_->running.server->Get(".*", respond);
  impl_->running.server->Post(".*", respond);
  impl_->running.start();
}

ScriptedServer::~ScriptedServer() = default;

std::string ScriptedServer::base_url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->running.port);
}

struct StateRewritingProxy::Impl {
  std::string upstream;
  std::string from;
  std::string to;
  Running running;
};

StateRewritingProxy::StateRewritingProxy(std::string upstream_base_url, std::string from,
                                         std::string to)
    : impl_(std::make_unique<Impl>()) {
  impl_->upstream = std::move(upstream_base_url);
  impl_->from = std::move(from);
  impl_->to = std::move(to);
  impl_->running.server = std::make_unique<httplib::Server>();
  auto* impl = impl_.get();

  auto forward = [impl](const httplib::Request& req, httplib::Response& res) {
    httplib::Client upstream(impl->upstream);
    std::string target = req.path;
    if (!req.params.empty()) {
      target += "?" + httplib::detail::params_to_query_str(req.params);
    }
    auto result = req.method == "POST" ? upstream.Post(target, req.body, "application/json")
                                       : upstream.Get(target);
    if (!result) {
      res.status = 502;
      return;
    }
    std::string body = result->body;
    const bool single_task = req.method == "GET" && req.path.rfind("/tasks/", 0) == 0;
    if (single_task && result->status == 200) {
      json parsed = json::parse(body);
      if (parsed.value("state", "") == impl->from) parsed["state"] = impl->to;
      body = parsed.dump();
    }
    res.status = result->status;
    res.set_content(body, "application/json");
  };
  impl_->running.server->Get(".*", forward);
  impl_->running.server->Post(".*", forward);
  impl_->running.start();
}

StateRewritingProxy::~StateRewritingProxy() = default;

std::string StateRewritingProxy::base_url() const {
  return "http://127.0.0.1:" + std::to_string(impl_->running.port);
}

LocalServer::LocalServer(LocalServerOptions options) {
  store_ = std::make_unique<TaskStore>(StoreOptions{std::nullopt, options.worker.capture_limit});
  registry_ = options.registry ? options.registry
                               : std::make_shared<ProtocolRegistry>(
                                     ProtocolRegistry::with_default_handlers());
  options.worker.sandbox_parent = sandboxes_.path();
  worker_ = std::make_unique<Worker>(*store_, registry_,
                                     std::make_shared<DirectProcessAdapter>(), options.worker);
  options.service.host = "127.0.0.1";
  options.service.port = 0;
  service_ = std::make_unique<TesService>(*store_, *worker_, registry_, options.service);
  if (options.start_worker) worker_->start();
  service_->start();
}

LocalServer::~LocalServer() {
  service_->stop();
  worker_->stop();
}

std::uint64_t StubHandler::fetch(const StorageUrl&, const fs::path& dest, FileType) {
  write_file(dest, "");
  return 0;
}

std::uint64_t StubHandler::put(const fs::path& src, const StorageUrl&) {
  return fs::file_size(src);
}

HttpReply http_call(const std::string& base_url, const std::string& method,
                    const std::string& target, const std::string& body,
                    const std::map<std::string, std::string>& headers) {
  httplib::Client client(base_url);
  client.set_read_timeout(30, 0);
  httplib::Headers h(headers.begin(), headers.end());
  httplib::Result result = method == "POST" ? client.Post(target, h, body, "application/json")
                           : method == "PUT" ? client.Put(target, h, body, "application/json")
                           : method == "DELETE" ? client.Delete(target, h)
                                                : client.Get(target, h);
  if (!result) return {};
  return {result->status, result->body};
}

TaskSpec shell_task(const std::string& script, std::optional<std::string> name) {
  TaskSpec spec;
  spec.name = std::move(name);
  Executor ex;
  ex.image = "alpine:3.19";
  ex.command = {"sh", "-c", script};
  spec.executors.push_back(std::move(ex));
  return spec;
}

std::optional<TaskState> wait_terminal(const TaskStore& store, const std::string& id,
                                       std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    const TaskState s = store.get_state(id);
    if (is_terminal(s)) return s;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  return std::nullopt;
}

bool process_with_cmdline_exists(const std::string& needle) {
  for (const auto& entry : fs::directory_iterator("/proc")) {
    const std::string name = entry.path().filename().string();
    if (name.empty() || !std::isdigit(static_cast<unsigned char>(name[0]))) continue;
    std::ifstream in(entry.path() / "cmdline", std::ios::binary);
    std::string cmdline((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    for (auto& c : cmdline) {
      if (c == '\0') c = ' ';
    }
    // Zombies have an empty cmdline and are not running anything.
    if (cmdline.find(needle) != std::string::npos) return true;
  }
  return false;
}

std::string audit_transitions(const std::vector<Transition>& transitions) {
  std::map<std::string, TaskState> current;
  for (const auto& t : transitions) {
    if (!is_valid_transition(t.from, t.to)) {
      return "invalid edge " + std::string(to_string(t.from)) + " -> " +
             std::string(to_string(t.to)) + " on " + t.task_id;
    }
    auto it = current.find(t.task_id);
    const TaskState expected = it == current.end() ? TaskState::Queued : it->second;
    if (t.from != expected) {
      return "task " + t.task_id + " jumped from " + std::string(to_string(expected)) +
             " (edge starts at " + std::string(to_string(t.from)) + ")";
    }
    current[t.task_id] = t.to;
  }
  return {};
}

}  // namespace tes::testing
