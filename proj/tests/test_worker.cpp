#include <doctest.h>

#include <future>
#include <thread>

#include "fixtures.hpp"
#include "tes/error.hpp"
#include "tes/worker.hpp"

using namespace tes;
using namespace tes::testing;
using namespace std::chrono_literals;

namespace {

struct Rig {
  TempDir sandboxes;
  TaskStore store;
  std::unique_ptr<Worker> worker;

  explicit Rig(WorkerConfig config = {}) {
    config.sandbox_parent = sandboxes.path();
    config.kill_grace = 1000ms;
    config.scheduler_interval = 50ms;
    worker = std::make_unique<Worker>(
        store, std::make_shared<ProtocolRegistry>(ProtocolRegistry::with_default_handlers()),
        std::make_shared<DirectProcessAdapter>(), config);
  }
  ~Rig() { worker->stop(); }
};

TaskSpec exits(const std::vector<int>& codes, const std::vector<bool>& ignore = {}) {
  TaskSpec spec;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    Executor ex;
    ex.image = "alpine";
    ex.command = {"sh", "-c", "exit " + std::to_string(codes[i])};
    ex.ignore_error = i < ignore.size() && ignore[i];
    spec.executors.push_back(ex);
  }
  return spec;
}

IOParameter io(std::string url, std::string path) {
  IOParameter p;
  p.url = std::move(url);
  p.path = std::move(path);
  return p;
}

// States a task passed through, from the audit log.
std::vector<TaskState> history(const TaskStore& store, const std::string& id) {
  std::vector<TaskState> states = {TaskState::Queued};
  for (const auto& t : store.transitions()) {
    if (t.task_id == id) states.push_back(t.to);
  }
  return states;
}

}  // namespace

TEST_CASE("capacity admission") {
  Capacity cap(4, 8.0);
  const Capacity::Reservation two{2, 0};
  CHECK(cap.admit(two));
  CHECK(cap.cpu_in_use() == 2);
  CHECK_FALSE(cap.admit(Capacity::Reservation{8, 0}));
  CHECK(cap.cpu_in_use() == 2);
  CHECK(cap.admit(two));
  CHECK_FALSE(cap.admit(two));
  cap.release(two);
  CHECK(cap.admit(two));
  cap.release(two);
  cap.release(two);
  CHECK(cap.cpu_in_use() == 0);
  CHECK(cap.ram_in_use_bytes() == 0);
}

TEST_CASE("capacity defaults and memory accounting") {
  CHECK(Capacity::required(std::nullopt) == Capacity::Reservation{1, 1LL << 30});
  Resources r;
  r.cpu_cores = 3;
  r.ram_gb = 2.5;
  CHECK(Capacity::required(r) == Capacity::Reservation{3, (5LL << 30) / 2});

  Capacity cap(16, 4.0);
  Resources big;
  big.ram_gb = 3.0;
  CHECK(cap.admit(big));
  CHECK_FALSE(cap.admit(big));
  CHECK(cap.admit(std::optional<Resources>{}));  // 1 GB fits exactly
  CHECK(cap.ram_in_use_bytes() == cap.total_ram_bytes());
}

TEST_CASE("capacity under concurrent admit and release") {
  Capacity cap(8, 1000.0);
  std::atomic<int> over{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 2000; ++i) {
        const Capacity::Reservation r{3, 1};
        if (cap.admit(r)) {
          if (cap.cpu_in_use() > 8) ++over;
          cap.release(r);
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK(over == 0);
  CHECK(cap.cpu_in_use() == 0);
}

TEST_CASE("end-to-end success with input, shared volume and output") {
  Rig rig;
  TempDir data;
  write_file(data / "in.txt", "hello");
  TaskSpec spec;
  spec.inputs.push_back(io("file://" + (data / "in.txt").string(), "/inputs/in.txt"));
  spec.outputs.push_back(io("file://" + (data / "out.txt").string(), "/outputs/out.txt"));
  spec.volumes = {"/shared"};
  Executor a;
  a.image = "alpine";
  a.command = {"sh", "-c", "tr a-z A-Z < /inputs/in.txt > /shared/mid"};
  Executor b;
  b.image = "alpine";
  b.command = {"sh", "-c", "cat /shared/mid /shared/mid > /outputs/out.txt; echo done"};
  spec.executors = {a, b};

  const std::string id = rig.store.create_task(spec);
  CHECK(rig.worker->run_task(id) == TaskState::Complete);
  CHECK(read_file(data / "out.txt") == "HELLOHELLO");

  const Task t = rig.store.get_task(id, TaskView::Full);
  REQUIRE(t.logs.size() == 1);
  REQUIRE(t.logs[0].executor_logs.size() == 2);
  CHECK(t.logs[0].executor_logs[0].exit_code == 0);
  CHECK(t.logs[0].executor_logs[1].stdout_tail == "done\n");
  REQUIRE(t.logs[0].output_files.size() == 1);
  CHECK(t.logs[0].output_files[0].size_bytes == 10);
  CHECK(t.logs[0].start_time.has_value());
  CHECK(t.logs[0].end_time.has_value());
  CHECK(history(rig.store, id) == std::vector<TaskState>{TaskState::Queued, TaskState::Initializing,
                                                         TaskState::Running, TaskState::Complete});
  CHECK_FALSE(fs::exists(rig.sandboxes / id));
}

TEST_CASE("executor failure ends the sequence unless ignored") {
  Rig rig;
  const std::string strict = rig.store.create_task(exits({0, 1, 0}));
  CHECK(rig.worker->run_task(strict) == TaskState::ExecutorError);
  const auto strict_logs = rig.store.get_task(strict, TaskView::Full).logs[0].executor_logs;
  REQUIRE(strict_logs.size() == 2);
  CHECK(strict_logs[1].exit_code == 1);

  const std::string lenient = rig.store.create_task(exits({0, 1, 0}, {false, true, false}));
  CHECK(rig.worker->run_task(lenient) == TaskState::Complete);
  const auto lenient_logs = rig.store.get_task(lenient, TaskView::Full).logs[0].executor_logs;
  REQUIRE(lenient_logs.size() == 3);
  CHECK(lenient_logs[1].exit_code == 1);
  CHECK(lenient_logs[2].exit_code == 0);
}

TEST_CASE("run_executors reports the exit sequence") {
  Rig rig;
  const Task task = rig.store.get_task(rig.store.create_task(exits({0, 2, 0})), TaskView::Full);
  const Sandbox sandbox = rig.worker->prepare_sandbox(task);
  CancelSignal cancel;
  const ExecutorRun run = rig.worker->run_executors(task, sandbox, cancel);
  CHECK_FALSE(run.ok);
  REQUIRE(run.logs.size() == 2);
  CHECK(run.logs[1].exit_code == 2);
}

TEST_CASE("stage-in failure is a system error with no executor logs") {
  Rig rig;
  TaskSpec spec = exits({0});
  spec.inputs.push_back(io("file:///nonexistent/input.txt", "/in/x"));
  const std::string id = rig.store.create_task(spec);
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(rig.worker->run_task(id) == TaskState::SystemError);
  CHECK(std::chrono::steady_clock::now() - t0 < 5s);
  const Task t = rig.store.get_task(id, TaskView::Full);
  REQUIRE(t.logs.size() == 1);
  CHECK(t.logs[0].executor_logs.empty());
  REQUIRE_FALSE(t.logs[0].system_logs.empty());
  CHECK(t.logs[0].system_logs.back().find("nonexistent") != std::string::npos);
}

TEST_CASE("unsupported input scheme is a system error") {
  Rig rig;
  TaskSpec spec = exits({0});
  spec.inputs.push_back(io("s3://bucket/key", "/in/x"));
  CHECK(rig.worker->run_task(rig.store.create_task(spec)) == TaskState::SystemError);
}

TEST_CASE("missing output is a system error") {
  Rig rig;
  TempDir dest;
  TaskSpec spec = exits({0});
  spec.outputs.push_back(io("file://" + (dest / "o").string(), "/out/never-written"));
  CHECK(rig.worker->run_task(rig.store.create_task(spec)) == TaskState::SystemError);
}

TEST_CASE("outputs are not uploaded when an executor fails") {
  Rig rig;
  TempDir dest;
  TaskSpec spec = exits({0});
  spec.executors[0].command = {"sh", "-c", "echo partial > /out/o; exit 1"};
  spec.outputs.push_back(io("file://" + (dest / "o").string(), "/out/o"));
  CHECK(rig.worker->run_task(rig.store.create_task(spec)) == TaskState::ExecutorError);
  CHECK_FALSE(fs::exists(dest / "o"));
}

TEST_CASE("executor stdio redirection and root-level files") {
  Rig rig;
  TempDir dest;
  TaskSpec spec = exits({0});
  IOParameter in;
  in.path = "/input.txt";
  in.content = "line\n";
  spec.inputs.push_back(in);
  spec.executors[0].command = {"cat"};
  spec.executors[0].stdin_path = "/input.txt";
  spec.executors[0].stdout_path = "/result/stdout.txt";
  spec.outputs.push_back(io("file://" + (dest / "s").string(), "/result/stdout.txt"));
  CHECK(rig.worker->run_task(rig.store.create_task(spec)) == TaskState::Complete);
  CHECK(read_file(dest / "s") == "line\n");
}

TEST_CASE("retained sandboxes survive") {
  WorkerConfig config;
  config.retain_sandboxes = true;
  Rig rig(config);
  const std::string id = rig.store.create_task(exits({0}));
  CHECK(rig.worker->run_task(id) == TaskState::Complete);
  CHECK(fs::exists(rig.sandboxes / id));
}

TEST_CASE("cancel a queued task") {
  Rig rig;
  const std::string id = rig.store.create_task(shell_task("echo should-not-run"));
  CHECK(rig.worker->cancel_task(id));
  CHECK(rig.store.get_state(id) == TaskState::Canceled);
  CHECK(rig.worker->run_task(id) == TaskState::Canceled);
  CHECK(rig.store.get_task(id, TaskView::Full).logs.empty());
}

TEST_CASE("cancel a running task") {
  Rig rig;
  const std::string id = rig.store.create_task(shell_task("sleep 60; echo marker-921"));
  auto fut = std::async(std::launch::async, [&] { return rig.worker->run_task(id); });
  while (rig.store.get_state(id) != TaskState::Running) std::this_thread::sleep_for(10ms);
  std::this_thread::sleep_for(200ms);
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(rig.worker->cancel_task(id));
  REQUIRE(fut.wait_for(7s) == std::future_status::ready);
  CHECK(fut.get() == TaskState::Canceled);
  CHECK(std::chrono::steady_clock::now() - t0 < 7s);
  const auto states = history(rig.store, id);
  CHECK(states == std::vector<TaskState>{TaskState::Queued, TaskState::Initializing,
                                         TaskState::Running, TaskState::Canceling,
                                         TaskState::Canceled});
  const Task t = rig.store.get_task(id, TaskView::Full);
  REQUIRE(t.logs[0].executor_logs.size() == 1);
  CHECK_FALSE(t.logs[0].executor_logs[0].exit_code.has_value());
  CHECK_FALSE(process_with_cmdline_exists("marker-921"));
}

TEST_CASE("cancel is idempotent on terminal tasks and unknown ids throw") {
  Rig rig;
  const std::string id = rig.store.create_task(exits({0}));
  REQUIRE(rig.worker->run_task(id) == TaskState::Complete);
  CHECK(rig.worker->cancel_task(id));
  CHECK(rig.worker->cancel_task(id));
  CHECK(rig.store.get_state(id) == TaskState::Complete);
  CHECK_THROWS_AS(rig.worker->cancel_task("missing"), Error);
}

TEST_CASE("scheduler runs queued tasks and backfills around oversized ones") {
  WorkerConfig config;
  config.pool_size = 2;
  config.total_cpu_cores = 2;
  Rig rig(config);
  TaskSpec huge = shell_task("true");
  huge.resources = Resources{};
  huge.resources->cpu_cores = 64;
  const std::string blocked = rig.store.create_task(huge);
  std::vector<std::string> small;
  for (int i = 0; i < 4; ++i) small.push_back(rig.store.create_task(shell_task("echo " + std::to_string(i))));
  rig.worker->start();
  for (const auto& id : small) CHECK(wait_terminal(rig.store, id, 20s) == TaskState::Complete);
  CHECK(rig.store.get_state(blocked) == TaskState::Queued);
  CHECK(rig.worker->capacity().cpu_in_use() == 0);
  rig.worker->stop();
  CHECK(audit_transitions(rig.store.transitions()).empty());
}

TEST_CASE("scheduler respects capacity") {
  WorkerConfig config;
  config.pool_size = 4;
  config.total_cpu_cores = 4;
  Rig rig(config);
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) {
    TaskSpec spec = shell_task("sleep 1");
    spec.resources = Resources{};
    spec.resources->cpu_cores = 2;
    ids.push_back(rig.store.create_task(spec));
  }
  rig.worker->start();
  // Only two of the three 2-core tasks fit at once.
  std::size_t max_active = 0;
  const auto deadline = std::chrono::steady_clock::now() + 20s;
  while (std::chrono::steady_clock::now() < deadline) {
    std::size_t running = 0;
    bool all_done = true;
    for (const auto& id : ids) {
      const TaskState s = rig.store.get_state(id);
      running += (s == TaskState::Running || s == TaskState::Initializing);
      all_done = all_done && is_terminal(s);
    }
    max_active = std::max(max_active, running);
    CHECK(rig.worker->capacity().cpu_in_use() <= 4);
    if (all_done) break;
    std::this_thread::sleep_for(20ms);
  }
  for (const auto& id : ids) CHECK(rig.store.get_state(id) == TaskState::Complete);
  CHECK(max_active == 2);
  CHECK(rig.worker->capacity().cpu_in_use() == 0);
}

TEST_CASE("stop cancels running tasks") {
  Rig rig;
  const std::string id = rig.store.create_task(shell_task("sleep 60"));
  rig.worker->start();
  const auto deadline = std::chrono::steady_clock::now() + 10s;
  while (rig.store.get_state(id) != TaskState::Running && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(10ms);
  }
  rig.worker->stop();
  CHECK(rig.store.get_state(id) == TaskState::Canceled);
}
