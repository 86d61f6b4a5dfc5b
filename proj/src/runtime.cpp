#include "tes/runtime.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <thread>

#include "tes/error.hpp"
#include "tes/staging.hpp"

extern char** environ;

namespace tes {

void TailBuffer::append(const char* data, std::size_t size) {
  if (limit_ == 0) return;
  if (size >= limit_) {
    buffer_.assign(data + (size - limit_), limit_);
    return;
  }
  buffer_.append(data, size);
  // Trim lazily so that appends stay amortized O(1).
  if (buffer_.size() > 2 * limit_) buffer_.erase(0, buffer_.size() - limit_);
}

std::string TailBuffer::str() const {
  if (buffer_.size() <= limit_) return buffer_;
  return buffer_.substr(buffer_.size() - limit_);
}

namespace {

/// Owns a file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Fd& operator=(Fd&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  ~Fd() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

Fd open_or_throw(const fs::path& p, int flags) {
  if (flags & O_CREAT) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  const int fd = ::open(p.c_str(), flags | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw Error(ErrorCode::AdapterFailure,
                "cannot open " + p.string() + ": " + std::strerror(errno));
  }
  return Fd(fd);
}

void write_all(int fd, const char* data, std::size_t size) {
  while (size > 0) {
    const ssize_t n = ::write(fd, data, size);
    if (n < 0) {
      if (errno == EINTR) continue;
      return;
    }
    data += n;
    size -= static_cast<std::size_t>(n);
  }
}

/// Owns the posix_spawn attribute objects.
struct SpawnConfig {
  posix_spawn_file_actions_t actions;
  posix_spawnattr_t attr;

  SpawnConfig() {
    posix_spawn_file_actions_init(&actions);
    posix_spawnattr_init(&attr);
  }
  ~SpawnConfig() {
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
  }
  SpawnConfig(const SpawnConfig&) = delete;
  SpawnConfig& operator=(const SpawnConfig&) = delete;
};

std::vector<char*> to_cstrings(const std::vector<std::string>& items) {
  std::vector<char*> out;
  out.reserve(items.size() + 1);
  for (const auto& s : items) out.push_back(const_cast<char*>(s.c_str()));
  out.push_back(nullptr);
  return out;
}

struct Stream {
  Fd pipe;
  Fd tee;
  TailBuffer tail;
};

}  // namespace

ExecResult supervise_process(const ProcessLaunch& launch, const CancelSignal& cancel,
                             const SupervisionOptions& options) {
  if (launch.argv.empty()) throw Error(ErrorCode::AdapterFailure, "empty command line");

  Fd stdin_fd = launch.stdin_file ? open_or_throw(*launch.stdin_file, O_RDONLY)
                                  : open_or_throw("/dev/null", O_RDONLY);
  Stream out{{}, {}, TailBuffer(options.capture_limit)};
  Stream err{{}, {}, TailBuffer(options.capture_limit)};
  if (launch.stdout_file) out.tee = open_or_throw(*launch.stdout_file, O_WRONLY | O_CREAT | O_TRUNC);
  if (launch.stderr_file) err.tee = open_or_throw(*launch.stderr_file, O_WRONLY | O_CREAT | O_TRUNC);

  int out_pipe[2], err_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::AdapterFailure, std::string("pipe: ") + std::strerror(errno));
  }
  Fd out_write(out_pipe[1]);
  out.pipe = Fd(out_pipe[0]);
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::AdapterFailure, std::string("pipe: ") + std::strerror(errno));
  }
  Fd err_write(err_pipe[1]);
  err.pipe = Fd(err_pipe[0]);

  SpawnConfig spawn;
  posix_spawn_file_actions_adddup2(&spawn.actions, stdin_fd.get(), STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&spawn.actions, out_write.get(), STDOUT_FILENO);
  posix_spawn_file_actions_adddup2(&spawn.actions, err_write.get(), STDERR_FILENO);
  if (!launch.cwd.empty()) {
    posix_spawn_file_actions_addchdir_np(&spawn.actions, launch.cwd.c_str());
  }
  posix_spawnattr_setpgroup(&spawn.attr, 0);
  sigset_t default_signals;
  sigemptyset(&default_signals);
  sigaddset(&default_signals, SIGPIPE);
  sigaddset(&default_signals, SIGTERM);
  sigaddset(&default_signals, SIGINT);
  posix_spawnattr_setsigdefault(&spawn.attr, &default_signals);
  sigset_t no_mask;
  sigemptyset(&no_mask);
  posix_spawnattr_setsigmask(&spawn.attr, &no_mask);
  posix_spawnattr_setflags(&spawn.attr, POSIX_SPAWN_SETPGROUP | POSIX_SPAWN_SETSIGDEF |
                                            POSIX_SPAWN_SETSIGMASK);

  auto argv = to_cstrings(launch.argv);
  auto envp = to_cstrings(launch.env);
  pid_t pid = -1;
  const int rc = ::posix_spawnp(&pid, argv[0], &spawn.actions, &spawn.attr, argv.data(),
                                envp.data());
  if (rc != 0) {
    throw Error(ErrorCode::AdapterFailure,
                "cannot launch '" + launch.argv.front() + "': " + std::strerror(rc));
  }
  out_write.reset();
  err_write.reset();
  stdin_fd.reset();

  using SteadyClock = std::chrono::steady_clock;
  std::optional<SteadyClock::time_point> kill_deadline;
  bool canceled = false;
  bool exited = false;
  int status = 0;
  char buf[16384];

  auto pump = [&](Stream& s) {
    const ssize_t n = ::read(s.pipe.get(), buf, sizeof buf);
    if (n > 0) {
      s.tail.append(buf, static_cast<std::size_t>(n));
      if (s.tee) write_all(s.tee.get(), buf, static_cast<std::size_t>(n));
    } else if (n == 0 || (errno != EINTR && errno != EAGAIN)) {
      s.pipe.reset();
    }
  };

  while (out.pipe || err.pipe || !exited) {
    if (!canceled && cancel.requested()) {
      canceled = true;
      ::kill(-pid, SIGTERM);
      kill_deadline = SteadyClock::now() + options.kill_grace;
    }
    if (kill_deadline && SteadyClock::now() >= *kill_deadline) {
      ::kill(-pid, SIGKILL);
      kill_deadline.reset();
    }

    pollfd fds[2];
    nfds_t count = 0;
    Stream* streams[2];
    for (Stream* s : {&out, &err}) {
      if (s->pipe) {
        fds[count] = {s->pipe.get(), POLLIN, 0};
        streams[count++] = s;
      }
    }
    if (count > 0) {
      const int ready = ::poll(fds, count, static_cast<int>(options.poll_interval.count()));
      if (ready > 0) {
        for (nfds_t i = 0; i < count; ++i) {
          if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) pump(*streams[i]);
        }
      }
    } else if (!exited) {
      std::this_thread::sleep_for(options.poll_interval);
    }

    if (!exited) {
      const pid_t w = ::waitpid(pid, &status, WNOHANG);
      if (w == pid) {
        exited = true;
        // Descendants may still hold the pipes open.
        ::kill(-pid, SIGKILL);
      }
    }
  }
  ::kill(-pid, SIGKILL);

  ExecResult result;
  result.canceled = canceled;
  result.stdout_tail = out.tail.str();
  result.stderr_tail = err.tail.str();
  if (!canceled) {
    if (WIFEXITED(status)) {
      result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
      result.exit_code = 128 + WTERMSIG(status);
    }
  }
  return result;
}

std::string rewrite_task_paths(const std::string& text, const std::vector<Mount>& mounts) {
  std::vector<const Mount*> ordered;
  for (const auto& m : mounts) {
    if (m.task_path.size() > 1) ordered.push_back(&m);
  }
  std::sort(ordered.begin(), ordered.end(), [](const Mount* a, const Mount* b) {
    return a->task_path.size() > b->task_path.size();
  });

  auto is_path_char = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  };
  auto opens_path = [&](std::size_t pos) {
    if (pos == 0) return true;
    const char prev = text[pos - 1];
    return !is_path_char(prev) && prev != '/';
  };

  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const Mount* hit = nullptr;
    if (text[i] == '/' && opens_path(i)) {
      for (const Mount* m : ordered) {
        const auto& p = m->task_path;
        if (text.compare(i, p.size(), p) != 0) continue;
        const std::size_t end = i + p.size();
        if (end == text.size() || text[end] == '/' || !is_path_char(text[end])) {
          hit = m;
          break;
        }
      }
    }
    if (hit) {
      out += hit->host_path.string();
      i += hit->task_path.size();
    } else {
      out.push_back(text[i++]);
    }
  }
  return out;
}

namespace {

fs::path host_path(const ExecRequest& request, const std::string& task_path) {
  return map_into_sandbox(request.sandbox_root, task_path);
}

}  // namespace

ExecResult DirectProcessAdapter::run(const ExecRequest& request, const CancelSignal& cancel,
                                     const SupervisionOptions& options) {
  ProcessLaunch launch;
  for (const auto& arg : request.command) {
    launch.argv.push_back(rewrite_task_paths(arg, request.mounts));
  }
  StringMap env;
  for (const auto& [k, v] : request.env) env[k] = rewrite_task_paths(v, request.mounts);
  env.emplace("HOME", host_path(request, "/tmp").string());
  for (const auto& [k, v] : env) launch.env.push_back(k + "=" + v);

  launch.cwd = host_path(request, request.workdir);
  std::error_code ec;
  fs::create_directories(launch.cwd, ec);
  if (request.stdin_path) launch.stdin_file = host_path(request, *request.stdin_path);
  if (request.stdout_path) launch.stdout_file = host_path(request, *request.stdout_path);
  if (request.stderr_path) launch.stderr_file = host_path(request, *request.stderr_path);
  return supervise_process(launch, cancel, options);
}

std::vector<std::string> ContainerAdapter::build_argv(const ExecRequest& request) const {
  std::vector<std::string> argv = {binary_, "run", "--rm", "-i"};
  for (const auto& m : request.mounts) {
    argv.push_back("-v");
    argv.push_back(m.host_path.string() + ":" + m.task_path);
  }
  argv.push_back("-w");
  argv.push_back(request.workdir);
  for (const auto& [k, v] : request.env) {
    argv.push_back("-e");
    argv.push_back(k + "=" + v);
  }
  argv.push_back(request.image);
  argv.insert(argv.end(), request.command.begin(), request.command.end());
  return argv;
}

ExecResult ContainerAdapter::run(const ExecRequest& request, const CancelSignal& cancel,
                                 const SupervisionOptions& options) {
  ProcessLaunch launch;
  launch.argv = build_argv(request);
  // The runtime CLI itself needs the host environment (DOCKER_HOST, PATH...);
  // the task environment only reaches the container through -e.
  for (char** e = environ; e && *e; ++e) launch.env.emplace_back(*e);
  launch.cwd = request.sandbox_root;
  if (request.stdin_path) launch.stdin_file = host_path(request, *request.stdin_path);
  if (request.stdout_path) launch.stdout_file = host_path(request, *request.stdout_path);
  if (request.stderr_path) launch.stderr_file = host_path(request, *request.stderr_path);
  return supervise_process(launch, cancel, options);
}

}  // namespace tes
