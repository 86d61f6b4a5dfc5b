#include "tes/worker.hpp"

#include <algorithm>
#include <cmath>

#include "tes/error.hpp"

namespace tes {

namespace {

constexpr double kBytesPerGb = 1024.0 * 1024.0 * 1024.0;

std::int64_t gb_to_bytes(double gb) { return std::llround(gb * kBytesPerGb); }

}  // namespace

Capacity::Capacity(std::int64_t total_cpu_cores, double total_ram_gb)
    : total_cpu_(total_cpu_cores), total_ram_(gb_to_bytes(total_ram_gb)) {}

Capacity::Reservation Capacity::required(const std::optional<Resources>& resources) {
  Reservation r{1, gb_to_bytes(1.0)};
  if (resources) {
    if (resources->cpu_cores) r.cpu_cores = *resources->cpu_cores;
    if (resources->ram_gb) r.ram_bytes = gb_to_bytes(*resources->ram_gb);
  }
  return r;
}

bool Capacity::admit(const Reservation& request) {
  std::lock_guard lock(mutex_);
  if (cpu_used_ + request.cpu_cores > total_cpu_) return false;
  if (ram_used_ + request.ram_bytes > total_ram_) return false;
  cpu_used_ += request.cpu_cores;
  ram_used_ += request.ram_bytes;
  return true;
}

void Capacity::release(const Reservation& reservation) {
  std::lock_guard lock(mutex_);
  cpu_used_ -= reservation.cpu_cores;
  ram_used_ -= reservation.ram_bytes;
}

std::int64_t Capacity::cpu_in_use() const {
  std::lock_guard lock(mutex_);
  return cpu_used_;
}

std::int64_t Capacity::ram_in_use_bytes() const {
  std::lock_guard lock(mutex_);
  return ram_used_;
}

Worker::Worker(TaskStore& store, std::shared_ptr<const ProtocolRegistry> registry,
               std::shared_ptr<RuntimeAdapter> runtime, WorkerConfig config)
    : store_(store),
      registry_(std::move(registry)),
      runtime_(std::move(runtime)),
      config_(std::move(config)),
      capacity_(config_.total_cpu_cores, config_.total_ram_gb) {}

Worker::~Worker() { stop(); }

void Worker::start() {
  std::lock_guard lock(mutex_);
  if (running_) return;
  running_ = true;
  stopping_ = false;
  for (std::size_t i = 0; i < std::max<std::size_t>(1, config_.pool_size); ++i) {
    pool_.emplace_back([this] { pool_loop(); });
  }
  scheduler_ = std::thread([this] { scheduler_loop(); });
}

void Worker::stop() {
  std::vector<std::string> live;
  {
    std::lock_guard lock(mutex_);
    if (!running_) return;
    stopping_ = true;
    for (const auto& [id, signal] : signals_) live.push_back(id);
  }
  for (const auto& id : live) {
    try {
      cancel_task(id);
    } catch (const Error&) {
    }
  }
  scheduler_cv_.notify_all();
  pool_cv_.notify_all();
  if (scheduler_.joinable()) scheduler_.join();
  for (auto& t : pool_) t.join();
  pool_.clear();
  std::lock_guard lock(mutex_);
  jobs_.clear();
  running_ = false;
}

void Worker::notify() {
  {
    std::lock_guard lock(mutex_);
    wake_ = true;
  }
  scheduler_cv_.notify_all();
}

std::size_t Worker::active_tasks() const {
  std::lock_guard lock(mutex_);
  return dispatched_.size();
}

void Worker::scheduler_loop() {
  std::unique_lock lock(mutex_);
  while (!stopping_) {
    lock.unlock();
    schedule_once();
    lock.lock();
    scheduler_cv_.wait_for(lock, config_.scheduler_interval,
                           [this] { return stopping_ || wake_; });
    wake_ = false;
  }
}

void Worker::schedule_once() {
  // Oldest first; a task that does not fit does not block later ones.
  for (const auto& id : store_.ids_in_state(TaskState::Queued)) {
    Capacity::Reservation need;
    {
      std::lock_guard lock(mutex_);
      if (stopping_ || dispatched_.size() >= config_.pool_size) return;
      if (dispatched_.count(id)) continue;
    }
    try {
      need = Capacity::required(store_.get_task(id, TaskView::Full).spec.resources);
    } catch (const Error&) {
      continue;
    }
    if (!capacity_.admit(need)) continue;
    {
      std::lock_guard lock(mutex_);
      dispatched_.insert(id);
      jobs_.push_back([this, id, need] {
        bool skip;
        {
          std::lock_guard inner(mutex_);
          skip = stopping_;
        }
        try {
          if (!skip) run_task(id);
        } catch (...) {
          // run_task reports its own failures through the store.
        }
        capacity_.release(need);
        {
          std::lock_guard inner(mutex_);
          dispatched_.erase(id);
          wake_ = true;
        }
        scheduler_cv_.notify_all();
      });
    }
    pool_cv_.notify_one();
  }
}

void Worker::pool_loop() {
  std::unique_lock lock(mutex_);
  while (true) {
    pool_cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
    if (jobs_.empty()) {
      if (stopping_) return;
      continue;
    }
    auto job = std::move(jobs_.front());
    jobs_.pop_front();
    lock.unlock();
    job();
    lock.lock();
  }
}

std::shared_ptr<CancelSignal> Worker::register_signal(const std::string& id) {
  std::lock_guard lock(mutex_);
  auto& slot = signals_[id];
  if (!slot) slot = std::make_shared<CancelSignal>();
  return slot;
}

void Worker::unregister_signal(const std::string& id) {
  std::lock_guard lock(mutex_);
  signals_.erase(id);
}

bool Worker::cancel_task(const std::string& id) {
  while (true) {
    const TaskState state = store_.get_state(id);
    switch (state) {
      case TaskState::Queued:
        if (store_.transition_state(id, TaskState::Queued, TaskState::Canceled)) {
          notify();
          return true;
        }
        break;  // lost a race with admission; re-read
      case TaskState::Initializing:
      case TaskState::Running:
        if (store_.transition_state(id, state, TaskState::Canceling)) {
          std::lock_guard lock(mutex_);
          if (auto it = signals_.find(id); it != signals_.end()) it->second->request();
          return true;
        }
        break;
      default:
        // Terminal or already canceling: nothing to do.
        return true;
    }
  }
}

TaskState Worker::finish(const std::string& id, TaskState from, TaskState to) {
  if (store_.transition_state(id, from, to)) return to;
  const TaskState now = store_.get_state(id);
  if (now == TaskState::Canceling &&
      store_.transition_state(id, TaskState::Canceling, TaskState::Canceled)) {
    return TaskState::Canceled;
  }
  return store_.get_state(id);
}

TaskState Worker::fail_system(const std::string& id, TaskState from,
                              const std::string& message) {
  LogUpdate note;
  note.system_logs.push_back(message);
  store_.record_log(id, note);
  return finish(id, from, TaskState::SystemError);
}

Sandbox Worker::prepare_sandbox(const Task& task) const {
  Sandbox sandbox;
  sandbox.root = config_.sandbox_parent / task.id;
  std::error_code ec;
  fs::remove_all(sandbox.root, ec);
  fs::create_directories(sandbox.root, ec);
  if (ec) {
    throw Error(ErrorCode::StorageUnavailable,
                "cannot create sandbox " + sandbox.root.string() + ": " + ec.message());
  }

  std::set<std::string> dirs{"/tmp"};
  std::set<std::string> files;
  for (const auto& v : task.spec.volumes) dirs.insert(v);
  auto add_io = [&](const IOParameter& p) {
    const fs::path path(p.path);
    const std::string parent = path.parent_path().string();
    if (parent == "/" || parent.empty()) {
      files.insert(p.path);
    } else {
      dirs.insert(parent);
    }
  };
  for (const auto& in : task.spec.inputs) add_io(in);
  for (const auto& out : task.spec.outputs) add_io(out);

  for (const auto& d : dirs) {
    const fs::path host = map_into_sandbox(sandbox.root, d);
    fs::create_directories(host, ec);
    sandbox.mounts.push_back({d, host});
  }
  for (const auto& f : files) {
    if (!dirs.count(f)) sandbox.mounts.push_back({f, map_into_sandbox(sandbox.root, f)});
  }
  return sandbox;
}

ExecutorLog Worker::run_single_executor(const Executor& executor, const Sandbox& sandbox,
                                        const CancelSignal& cancel) {
  ExecRequest request;
  request.image = executor.image;
  request.command = executor.command;
  request.env = executor.env;
  request.env.emplace("HOME", "/tmp");
  request.workdir = executor.workdir.value_or("/");
  request.stdin_path = executor.stdin_path;
  request.stdout_path = executor.stdout_path;
  request.stderr_path = executor.stderr_path;
  request.sandbox_root = sandbox.root;
  request.mounts = sandbox.mounts;

  SupervisionOptions options;
  options.capture_limit = config_.capture_limit;
  options.kill_grace = config_.kill_grace;

  ExecutorLog log;
  log.start_time = now_utc();
  ExecResult result = runtime_->run(request, cancel, options);
  log.end_time = now_utc();
  log.exit_code = result.exit_code;
  log.stdout_tail = std::move(result.stdout_tail);
  log.stderr_tail = std::move(result.stderr_tail);
  return log;
}

ExecutorRun Worker::run_executors(const Task& task, const Sandbox& sandbox,
                                  const CancelSignal& cancel) {
  ExecutorRun run;
  for (std::size_t i = 0; i < task.spec.executors.size(); ++i) {
    if (cancel.requested()) {
      run.canceled = true;
      run.ok = false;
      break;
    }
    const Executor& executor = task.spec.executors[i];
    ExecutorLog log = run_single_executor(executor, sandbox, cancel);
    LogUpdate update;
    update.executor_logs[i] = log;
    store_.record_log(task.id, update);
    run.logs.push_back(std::move(log));

    const auto& recorded = run.logs.back();
    if (!recorded.exit_code) {
      run.canceled = true;
      run.ok = false;
      break;
    }
    if (*recorded.exit_code != 0 && !executor.ignore_error) {
      run.ok = false;
      break;
    }
  }
  return run;
}

TaskState Worker::run_task(const std::string& id) {
  auto cancel = register_signal(id);
  struct Cleanup {
    Worker* self;
    std::string id;
    std::optional<fs::path> sandbox;
    ~Cleanup() {
      if (sandbox && !self->config_.retain_sandboxes) {
        std::error_code ec;
        fs::remove_all(*sandbox, ec);
      }
      self->unregister_signal(id);
    }
  } cleanup{this, id, std::nullopt};

  if (!store_.transition_state(id, TaskState::Queued, TaskState::Initializing)) {
    return store_.get_state(id);
  }

  auto end_log = [&] {
    LogUpdate done;
    done.end_time = now_utc();
    store_.record_log(id, done);
  };

  LogUpdate started;
  started.start_time = now_utc();
  store_.record_log(id, started);

  TaskState stage = TaskState::Initializing;
  TaskState final_state;
  try {
    const Task task = store_.get_task(id, TaskView::Full);
    const Sandbox sandbox = prepare_sandbox(task);
    cleanup.sandbox = sandbox.root;

    for (std::size_t i = 0; i < task.spec.inputs.size(); ++i) {
      if (cancel->requested()) break;
      try {
        stage_input(*registry_, task.spec.inputs[i], sandbox.root);
      } catch (const Error& e) {
        final_state = fail_system(id, stage,
                                  "stage-in of inputs[" + std::to_string(i) + "] failed: " +
                                      std::string(to_string(e.code())) + ": " + e.what());
        end_log();
        return final_state;
      }
    }
    if (cancel->requested()) {
      final_state = finish(id, TaskState::Canceling, TaskState::Canceled);
      end_log();
      return final_state;
    }

    if (!store_.transition_state(id, TaskState::Initializing, TaskState::Running)) {
      final_state = finish(id, TaskState::Canceling, TaskState::Canceled);
      end_log();
      return final_state;
    }
    stage = TaskState::Running;

    ExecutorRun run = run_executors(task, sandbox, *cancel);
    if (run.canceled || cancel->requested()) {
      final_state = finish(id, TaskState::Canceling, TaskState::Canceled);
      end_log();
      return final_state;
    }
    if (!run.ok) {
      final_state = finish(id, TaskState::Running, TaskState::ExecutorError);
      end_log();
      return final_state;
    }

    LogUpdate outputs;
    for (std::size_t i = 0; i < task.spec.outputs.size(); ++i) {
      try {
        auto files = stage_output(*registry_, task.spec.outputs[i], sandbox.root);
        outputs.output_files.insert(outputs.output_files.end(), files.begin(), files.end());
      } catch (const Error& e) {
        store_.record_log(id, outputs);
        final_state = fail_system(id, stage,
                                  "stage-out of outputs[" + std::to_string(i) + "] failed: " +
                                      std::string(to_string(e.code())) + ": " + e.what());
        end_log();
        return final_state;
      }
    }
    store_.record_log(id, outputs);
    final_state = finish(id, TaskState::Running, TaskState::Complete);
  } catch (const std::exception& e) {
    final_state = fail_system(id, stage, std::string("internal error: ") + e.what());
  }
  end_log();
  return final_state;
}

}  // namespace tes
