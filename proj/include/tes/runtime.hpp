#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tes/model.hpp"

namespace tes {

namespace fs = std::filesystem;

/// Set once, observed by whoever is running the task.
class CancelSignal {
 public:
  void request() noexcept { requested_.store(true, std::memory_order_release); }
  bool requested() const noexcept { return requested_.load(std::memory_order_acquire); }

 private:
  std::atomic<bool> requested_{false};
};

/// A task path made visible to executors at a host location.
struct Mount {
  std::string task_path;
  fs::path host_path;

  bool operator==(const Mount&) const = default;
};

/// Everything an adapter needs to run one executor. Paths are task paths;
/// the adapter decides how they reach the process.
struct ExecRequest {
  std::string image;
  std::vector<std::string> command;
  StringMap env;
  std::string workdir = "/";
  std::optional<std::string> stdin_path;
  std::optional<std::string> stdout_path;
  std::optional<std::string> stderr_path;
  fs::path sandbox_root;
  std::vector<Mount> mounts;
};

struct ExecResult {
  /// Absent when the process was stopped by cancellation.
  std::optional<int> exit_code;
  std::string stdout_tail;
  std::string stderr_tail;
  bool canceled = false;
};

/// Keeps the last `limit` bytes written to it.
class TailBuffer {
 public:
  explicit TailBuffer(std::size_t limit) : limit_(limit) {}

  void append(const char* data, std::size_t size);
  std::string str() const;

 private:
  std::size_t limit_;
  std::string buffer_;
};

/// Host-level process launch description.
struct ProcessLaunch {
  std::vector<std::string> argv;
  std::vector<std::string> env;  // "KEY=VALUE"
  fs::path cwd;
  std::optional<fs::path> stdin_file;
  std::optional<fs::path> stdout_file;
  std::optional<fs::path> stderr_file;
};

struct SupervisionOptions {
  std::size_t capture_limit = 64 * 1024;
  std::chrono::milliseconds kill_grace{5000};
  std::chrono::milliseconds poll_interval{50};
};

/// Runs the process in its own process group, tees stdout/stderr into the
/// optional files and the capped tails, and on cancellation sends SIGTERM to
/// the group followed by SIGKILL after the grace period. Every process left
/// in the group is killed before returning. Throws Error(AdapterFailure) if
/// the process cannot be started.
ExecResult supervise_process(const ProcessLaunch& launch, const CancelSignal& cancel,
                             const SupervisionOptions& options);

class RuntimeAdapter {
 public:
  virtual ~RuntimeAdapter() = default;
  virtual std::string name() const = 0;
  virtual ExecResult run(const ExecRequest& request, const CancelSignal& cancel,
                         const SupervisionOptions& options) = 0;
};

/// Ignores the image and runs the command directly on the host with a
/// scrubbed environment. Task paths are made visible by rewriting mounted
/// path prefixes that appear in arguments and environment values.
class DirectProcessAdapter : public RuntimeAdapter {
 public:
  std::string name() const override { return "direct"; }
  ExecResult run(const ExecRequest& request, const CancelSignal& cancel,
                 const SupervisionOptions& options) override;
};

/// Replaces every occurrence of a mount's task path that sits on a path
/// boundary with the mount's host path. Single pass, longest mount first.
std::string rewrite_task_paths(const std::string& text, const std::vector<Mount>& mounts);

/// Shells out to a docker-compatible CLI (`<binary> run --rm -i ...`).
class ContainerAdapter : public RuntimeAdapter {
 public:
  explicit ContainerAdapter(std::string binary = "docker") : binary_(std::move(binary)) {}

  std::string name() const override { return "container:" + binary_; }
  ExecResult run(const ExecRequest& request, const CancelSignal& cancel,
                 const SupervisionOptions& options) override;

  std::vector<std::string> build_argv(const ExecRequest& request) const;

 private:
  std::string binary_;
};

}  // namespace tes
