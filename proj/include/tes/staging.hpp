#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "tes/model.hpp"

namespace tes {

namespace fs = std::filesystem;

struct StorageUrl {
  std::string scheme;     // lowercase
  std::string remainder;  // everything after "://"

  bool operator==(const StorageUrl&) const = default;
};

/// Splits at the first "://" and lowercases the scheme. A bare absolute path
/// is a file URL. Throws Error(UnparsableUrl).
StorageUrl parse_storage_url(std::string_view raw);
std::string render_storage_url(const StorageUrl& url);

struct HandlerCapabilities {
  bool read = true;
  bool write = true;
};

/// Moves bytes between one URL scheme and the local filesystem.
///
/// Implementations throw Error(SourceNotFound) when the source does not
/// exist and Error(TransferFailed) for any other IO or network failure.
class ProtocolHandler {
 public:
  virtual ~ProtocolHandler() = default;

  virtual std::string scheme() const = 0;
  virtual HandlerCapabilities capabilities() const { return {}; }

  /// Materializes `url` at `dest`; for DIRECTORY the source tree is copied
  /// recursively. Returns the number of bytes written.
  virtual std::uint64_t fetch(const StorageUrl& url, const fs::path& dest, FileType type) = 0;

  /// Uploads one regular file. Returns its size.
  virtual std::uint64_t put(const fs::path& src, const StorageUrl& url) = 0;
};

class FileHandler : public ProtocolHandler {
 public:
  std::string scheme() const override { return "file"; }
  std::uint64_t fetch(const StorageUrl& url, const fs::path& dest, FileType type) override;
  std::uint64_t put(const fs::path& src, const StorageUrl& url) override;
};

struct HttpHandlerOptions {
  int max_attempts = 3;
  std::chrono::milliseconds backoff_step{500};
  std::chrono::seconds timeout{30};
  bool verify_tls = true;
};

/// GET for inputs (200 required), PUT for outputs (any 2xx). Failed attempts
/// are retried with linear backoff; 404 is reported immediately.
class HttpHandler : public ProtocolHandler {
 public:
  explicit HttpHandler(std::string scheme, HttpHandlerOptions options = {});

  std::string scheme() const override { return scheme_; }
  std::uint64_t fetch(const StorageUrl& url, const fs::path& dest, FileType type) override;
  std::uint64_t put(const fs::path& src, const StorageUrl& url) override;

 private:
  std::string scheme_;
  HttpHandlerOptions options_;
};

class ProtocolRegistry {
 public:
  /// Registry with the shipped handlers: file, http and https.
  static ProtocolRegistry with_default_handlers(HttpHandlerOptions http = {});

  /// Replaces any handler previously registered for the same scheme.
  void register_handler(std::shared_ptr<ProtocolHandler> handler);

  /// nullptr when no handler is registered.
  std::shared_ptr<ProtocolHandler> find(std::string_view scheme) const;

  /// Sorted, deduplicated schemes.
  std::vector<std::string> supported_protocols() const;

 private:
  std::map<std::string, std::shared_ptr<ProtocolHandler>, std::less<>> handlers_;
};

/// Host location of a task path: the sandbox re-roots "/". Throws
/// Error(InvalidPath) for relative paths and for paths whose ".." segments
/// climb above the root.
fs::path map_into_sandbox(const fs::path& sandbox_root, std::string_view task_path);

std::uint64_t stage_input(const ProtocolRegistry& registry, const IOParameter& param,
                          const fs::path& sandbox_root);

std::vector<OutputFileLog> stage_output(const ProtocolRegistry& registry,
                                        const IOParameter& param,
                                        const fs::path& sandbox_root);

}  // namespace tes
