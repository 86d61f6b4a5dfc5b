#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "tes/model.hpp"
#include "tes/runtime.hpp"
#include "tes/staging.hpp"
#include "tes/store.hpp"

namespace tes {

/// Bookkeeping of cores and memory held by admitted tasks. RAM is tracked in
/// bytes so that reserve/release pairs cancel exactly.
class Capacity {
 public:
  struct Reservation {
    std::int64_t cpu_cores = 1;
    std::int64_t ram_bytes = 0;

    bool operator==(const Reservation&) const = default;
  };

  Capacity(std::int64_t total_cpu_cores, double total_ram_gb);

  /// What a task asks for; absent fields default to 1 core and 1 GB.
  static Reservation required(const std::optional<Resources>& resources);

  /// Reserves and returns true iff the request fits in the free capacity.
  bool admit(const Reservation& request);
  bool admit(const std::optional<Resources>& resources) { return admit(required(resources)); }
  void release(const Reservation& reservation);

  std::int64_t total_cpu_cores() const { return total_cpu_; }
  std::int64_t total_ram_bytes() const { return total_ram_; }
  std::int64_t cpu_in_use() const;
  std::int64_t ram_in_use_bytes() const;

 private:
  mutable std::mutex mutex_;
  std::int64_t total_cpu_;
  std::int64_t total_ram_;
  std::int64_t cpu_used_ = 0;
  std::int64_t ram_used_ = 0;
};

struct Sandbox {
  fs::path root;
  std::vector<Mount> mounts;
};

struct WorkerConfig {
  std::size_t pool_size = 4;
  std::int64_t total_cpu_cores = 4;
  double total_ram_gb = 8.0;
  fs::path sandbox_parent = fs::temp_directory_path() / "tes-sandboxes";
  std::size_t capture_limit = 64 * 1024;
  bool retain_sandboxes = false;
  std::chrono::milliseconds scheduler_interval{250};
  std::chrono::milliseconds kill_grace{5000};
};

struct ExecutorRun {
  bool ok = true;
  bool canceled = false;
  std::vector<ExecutorLog> logs;
};

/// Runs tasks from the store end to end: sandbox, stage-in, executors,
/// stage-out, final state. With start() a scheduler admits QUEUED tasks in
/// creation order onto a fixed-size pool.
class Worker {
 public:
  Worker(TaskStore& store, std::shared_ptr<const ProtocolRegistry> registry,
         std::shared_ptr<RuntimeAdapter> runtime, WorkerConfig config = {});
  ~Worker();

  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;

  void start();
  /// Cancels running tasks and joins all threads. Idempotent.
  void stop();
  /// Wakes the scheduler ahead of its next poll.
  void notify();

  /// Drives one QUEUED task to a terminal state on the calling thread. The
  /// caller is responsible for capacity admission.
  TaskState run_task(const std::string& id);

  ExecutorRun run_executors(const Task& task, const Sandbox& sandbox,
                            const CancelSignal& cancel);
  ExecutorLog run_single_executor(const Executor& executor, const Sandbox& sandbox,
                                  const CancelSignal& cancel);

  /// Always true for known tasks; throws Error(NotFound) otherwise.
  bool cancel_task(const std::string& id);

  Sandbox prepare_sandbox(const Task& task) const;

  const Capacity& capacity() const { return capacity_; }
  Capacity& capacity() { return capacity_; }
  std::size_t active_tasks() const;
  const WorkerConfig& config() const { return config_; }

 private:
  std::shared_ptr<CancelSignal> register_signal(const std::string& id);
  void unregister_signal(const std::string& id);
  TaskState finish(const std::string& id, TaskState from, TaskState to);
  TaskState fail_system(const std::string& id, TaskState from, const std::string& message);
  void scheduler_loop();
  void pool_loop();
  void schedule_once();

  TaskStore& store_;
  std::shared_ptr<const ProtocolRegistry> registry_;
  std::shared_ptr<RuntimeAdapter> runtime_;
  WorkerConfig config_;
  Capacity capacity_;

  mutable std::mutex mutex_;
  std::condition_variable scheduler_cv_;
  std::condition_variable pool_cv_;
  std::unordered_map<std::string, std::shared_ptr<CancelSignal>> signals_;
  std::set<std::string> dispatched_;
  std::deque<std::function<void()>> jobs_;
  bool running_ = false;
  bool stopping_ = false;
  bool wake_ = false;
  std::thread scheduler_;
  std::vector<std::thread> pool_;
};

}  // namespace tes
