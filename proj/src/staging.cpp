#include "tes/staging.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <thread>

#include "tes/error.hpp"

namespace tes {

namespace {

bool valid_scheme(std::string_view s) {
  if (s.empty() || !std::islower(static_cast<unsigned char>(s.front()))) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::islower(static_cast<unsigned char>(c)) ||
           std::isdigit(static_cast<unsigned char>(c)) || c == '+' || c == '.' || c == '-';
  });
}

fs::path local_path(const StorageUrl& url) {
  std::string_view rest = url.remainder;
  if (!rest.empty() && rest.front() != '/') {
    // file://localhost/path is the only host form accepted.
    constexpr std::string_view kLocalhost = "localhost";
    if (rest.substr(0, kLocalhost.size()) == kLocalhost &&
        (rest.size() == kLocalhost.size() || rest[kLocalhost.size()] == '/')) {
      rest.remove_prefix(kLocalhost.size());
    } else {
      throw Error(ErrorCode::TransferFailed,
                  "file URL '" + render_storage_url(url) + "' names a remote host");
    }
  }
  if (rest.empty()) throw Error(ErrorCode::TransferFailed, "file URL has an empty path");
  return fs::path(rest);
}

void ensure_parent(const fs::path& p) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  if (ec) {
    throw Error(ErrorCode::TransferFailed,
                "cannot create directory " + p.parent_path().string() + ": " + ec.message());
  }
}

std::uint64_t copy_regular_file(const fs::path& src, const fs::path& dest) {
  ensure_parent(dest);
  std::error_code ec;
  fs::copy_file(src, dest, fs::copy_options::overwrite_existing, ec);
  if (ec) {
    throw Error(ErrorCode::TransferFailed,
                "copy " + src.string() + " -> " + dest.string() + ": " + ec.message());
  }
  return fs::file_size(dest);
}

std::uint64_t copy_tree(const fs::path& src, const fs::path& dest) {
  std::uint64_t total = 0;
  std::error_code ec;
  fs::create_directories(dest, ec);
  if (ec) throw Error(ErrorCode::TransferFailed, "cannot create " + dest.string());
  for (const auto& entry : fs::recursive_directory_iterator(src)) {
    const fs::path target = dest / fs::relative(entry.path(), src);
    if (entry.is_directory()) {
      fs::create_directories(target, ec);
    } else if (entry.is_regular_file()) {
      total += copy_regular_file(entry.path(), target);
    }
  }
  return total;
}

/// Splits "host:port/path?q" into the origin and the request target.
std::pair<std::string, std::string> split_http(const StorageUrl& url) {
  const auto slash = url.remainder.find('/');
  std::string host = url.remainder.substr(0, slash);
  std::string target = slash == std::string::npos ? "/" : url.remainder.substr(slash);
  if (host.empty()) {
    throw Error(ErrorCode::TransferFailed, "URL '" + render_storage_url(url) + "' has no host");
  }
  return {url.scheme + "://" + host, target};
}

}  // namespace

StorageUrl parse_storage_url(std::string_view raw) {
  const auto sep = raw.find("://");
  if (sep == std::string_view::npos) {
    if (!raw.empty() && raw.front() == '/') return {"file", std::string(raw)};
    throw Error(ErrorCode::UnparsableUrl, "cannot interpret '" + std::string(raw) + "' as a URL");
  }
  std::string scheme(raw.substr(0, sep));
  std::transform(scheme.begin(), scheme.end(), scheme.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (!valid_scheme(scheme)) {
    throw Error(ErrorCode::UnparsableUrl, "invalid URL scheme in '" + std::string(raw) + "'");
  }
  return {std::move(scheme), std::string(raw.substr(sep + 3))};
}

std::string render_storage_url(const StorageUrl& url) {
  return url.scheme + "://" + url.remainder;
}

std::uint64_t FileHandler::fetch(const StorageUrl& url, const fs::path& dest, FileType type) {
  const fs::path src = local_path(url);
  std::error_code ec;
  const auto status = fs::status(src, ec);
  if (!fs::exists(status)) {
    throw Error(ErrorCode::SourceNotFound, "input " + src.string() + " does not exist");
  }
  if (type == FileType::Directory) {
    if (!fs::is_directory(status)) {
      throw Error(ErrorCode::TransferFailed, src.string() + " is not a directory");
    }
    return copy_tree(src, dest);
  }
  if (!fs::is_regular_file(status)) {
    throw Error(ErrorCode::TransferFailed, src.string() + " is not a regular file");
  }
  return copy_regular_file(src, dest);
}

std::uint64_t FileHandler::put(const fs::path& src, const StorageUrl& url) {
  return copy_regular_file(src, local_path(url));
}

HttpHandler::HttpHandler(std::string scheme, HttpHandlerOptions options)
    : scheme_(std::move(scheme)), options_(options) {}

namespace {

httplib::Client make_client(const std::string& origin, const HttpHandlerOptions& options) {
  httplib::Client client(origin);
  client.set_connection_timeout(options.timeout);
  client.set_read_timeout(options.timeout);
  client.set_write_timeout(options.timeout);
  client.enable_server_certificate_verification(options.verify_tls);
  client.set_follow_location(true);
  return client;
}

}  // namespace

std::uint64_t HttpHandler::fetch(const StorageUrl& url, const fs::path& dest, FileType type) {
  if (type == FileType::Directory) {
    throw Error(ErrorCode::TransferFailed,
                "directory inputs are not supported for " + scheme_ + " URLs");
  }
  const auto [origin, target] = split_http(url);
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    if (attempt > 1) std::this_thread::sleep_for(options_.backoff_step * (attempt - 1));
    auto client = make_client(origin, options_);
    auto res = client.Get(target);
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status == 404) {
      throw Error(ErrorCode::SourceNotFound, render_storage_url(url) + " returned 404");
    }
    if (res->status != 200) {
      last_error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    ensure_parent(dest);
    std::ofstream out(dest, std::ios::binary | std::ios::trunc);
    out.write(res->body.data(), static_cast<std::streamsize>(res->body.size()));
    if (!out) throw Error(ErrorCode::TransferFailed, "cannot write " + dest.string());
    return res->body.size();
  }
  throw Error(ErrorCode::TransferFailed, "GET " + render_storage_url(url) + " failed after " +
                                             std::to_string(options_.max_attempts) +
                                             " attempts: " + last_error);
}

std::uint64_t HttpHandler::put(const fs::path& src, const StorageUrl& url) {
  std::ifstream in(src, std::ios::binary);
  if (!in) throw Error(ErrorCode::TransferFailed, "cannot read " + src.string());
  const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  const auto [origin, target] = split_http(url);
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    if (attempt > 1) std::this_thread::sleep_for(options_.backoff_step * (attempt - 1));
    auto client = make_client(origin, options_);
    auto res = client.Put(target, body, "application/octet-stream");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 200 && res->status < 300) return body.size();
    last_error = "HTTP status " + std::to_string(res->status);
  }
  throw Error(ErrorCode::TransferFailed, "PUT " + render_storage_url(url) + " failed after " +
                                             std::to_string(options_.max_attempts) +
                                             " attempts: " + last_error);
}

ProtocolRegistry ProtocolRegistry::with_default_handlers(HttpHandlerOptions http) {
  ProtocolRegistry registry;
  registry.register_handler(std::make_shared<FileHandler>());
  registry.register_handler(std::make_shared<HttpHandler>("http", http));
  registry.register_handler(std::make_shared<HttpHandler>("https", http));
  return registry;
}

void ProtocolRegistry::register_handler(std::shared_ptr<ProtocolHandler> handler) {
  auto scheme = handler->scheme();
  handlers_[std::move(scheme)] = std::move(handler);
}

std::shared_ptr<ProtocolHandler> ProtocolRegistry::find(std::string_view scheme) const {
  auto it = handlers_.find(scheme);
  return it == handlers_.end() ? nullptr : it->second;
}

std::vector<std::string> ProtocolRegistry::supported_protocols() const {
  std::vector<std::string> schemes;
  for (const auto& [scheme, handler] : handlers_) schemes.push_back(scheme);
  return schemes;
}

fs::path map_into_sandbox(const fs::path& sandbox_root, std::string_view task_path) {
  if (task_path.empty() || task_path.front() != '/') {
    throw Error(ErrorCode::InvalidPath, "'" + std::string(task_path) + "' is not absolute");
  }
  std::vector<std::string> parts;
  for (const auto& part : fs::path(task_path).relative_path()) {
    const std::string s = part.string();
    if (s.empty() || s == ".") continue;
    if (s == "..") {
      if (parts.empty()) {
        throw Error(ErrorCode::InvalidPath,
                    "'" + std::string(task_path) + "' escapes the sandbox");
      }
      parts.pop_back();
      continue;
    }
    parts.push_back(s);
  }
  fs::path out = sandbox_root;
  for (const auto& p : parts) out /= p;
  return out;
}

namespace {

std::shared_ptr<ProtocolHandler> require_handler(const ProtocolRegistry& registry,
                                                 const StorageUrl& url, bool for_write) {
  auto handler = registry.find(url.scheme);
  if (!handler) {
    throw Error(ErrorCode::UnsupportedProtocol,
                "no handler registered for scheme '" + url.scheme + "'");
  }
  const auto caps = handler->capabilities();
  if (for_write ? !caps.write : !caps.read) {
    throw Error(ErrorCode::UnsupportedProtocol,
                "handler for '" + url.scheme + "' cannot " + (for_write ? "write" : "read"));
  }
  return handler;
}

}  // namespace

std::uint64_t stage_input(const ProtocolRegistry& registry, const IOParameter& param,
                          const fs::path& sandbox_root) {
  const fs::path dest = map_into_sandbox(sandbox_root, param.path);
  if (param.content) {
    ensure_parent(dest);
    std::ofstream out(dest, std::ios::binary | std::ios::trunc);
    out << *param.content;
    if (!out) throw Error(ErrorCode::TransferFailed, "cannot write " + dest.string());
    return param.content->size();
  }
  const StorageUrl url = parse_storage_url(param.url);
  auto handler = require_handler(registry, url, false);
  ensure_parent(dest);
  return handler->fetch(url, dest, param.type);
}

std::vector<OutputFileLog> stage_output(const ProtocolRegistry& registry,
                                        const IOParameter& param,
                                        const fs::path& sandbox_root) {
  const StorageUrl url = parse_storage_url(param.url);
  auto handler = require_handler(registry, url, true);
  const fs::path src = map_into_sandbox(sandbox_root, param.path);
  std::error_code ec;
  const auto status = fs::status(src, ec);
  if (!fs::exists(status)) {
    throw Error(ErrorCode::MissingOutput, "declared output " + param.path + " was not created");
  }

  std::vector<OutputFileLog> logs;
  if (param.type == FileType::File) {
    if (!fs::is_regular_file(status)) {
      throw Error(ErrorCode::TransferFailed, "output " + param.path + " is not a regular file");
    }
    logs.push_back({param.url, param.path, handler->put(src, url)});
    return logs;
  }
  if (!fs::is_directory(status)) {
    throw Error(ErrorCode::TransferFailed, "output " + param.path + " is not a directory");
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(src)) {
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), src));
  }
  std::sort(files.begin(), files.end());

  std::string base = render_storage_url(url);
  while (!base.empty() && base.back() == '/') base.pop_back();
  std::string task_base = param.path;
  while (task_base.size() > 1 && task_base.back() == '/') task_base.pop_back();
  for (const auto& rel : files) {
    const std::string rel_text = rel.generic_string();
    const std::string file_url = base + "/" + rel_text;
    const auto size = handler->put(src / rel, parse_storage_url(file_url));
    logs.push_back({file_url, task_base + "/" + rel_text, size});
  }
  return logs;
}

}  // namespace tes
