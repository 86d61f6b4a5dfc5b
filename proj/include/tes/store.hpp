#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tes/json.hpp"
#include "tes/model.hpp"

namespace tes {

/// Conjunction of the three filters. A tag whose value is empty matches any
/// task carrying the key.
struct ListFilter {
  std::optional<TaskState> state;
  std::optional<std::string> name_prefix;
  StringMap tags;
};

struct Page {
  std::vector<Task> items;
  std::optional<std::string> next_page_token;
};

/// Incremental addition to a task's single log record. Executor entries are
/// keyed by executor index; present fields overwrite, output tails append.
struct LogUpdate {
  std::optional<Timestamp> start_time;
  std::optional<Timestamp> end_time;
  std::map<std::size_t, ExecutorLog> executor_logs;
  std::vector<OutputFileLog> output_files;
  std::vector<std::string> system_logs;
};

json log_update_to_json(const LogUpdate& u);
LogUpdate log_update_from_json(const json& j);

/// One accepted state change, kept for auditing.
struct Transition {
  std::string task_id;
  TaskState from;
  TaskState to;
};

struct StoreOptions {
  /// Newline-delimited JSON journal, replayed on construction when present.
  std::optional<std::filesystem::path> journal_path;
  std::size_t capture_limit = 64 * 1024;
};

/// Sort position of a task in listings: newest first, ties broken by id.
struct PagePosition {
  std::int64_t creation_us = 0;
  std::string id;

  auto operator<=>(const PagePosition&) const = default;
};

std::string encode_page_token(const PagePosition& pos);
/// Throws Error(InvalidPageToken).
PagePosition decode_page_token(std::string_view token);

std::string generate_task_id();

/// In-process registry of tasks. All member functions are safe to call
/// concurrently; transition_state is the only way a stored state changes.
class TaskStore {
 public:
  static constexpr std::size_t kDefaultPageSize = 256;
  static constexpr std::size_t kMaxPageSize = 2048;

  explicit TaskStore(StoreOptions options = {});

  TaskStore(const TaskStore&) = delete;
  TaskStore& operator=(const TaskStore&) = delete;

  /// Throws Error(ValidationFailed) with the first violation in the message,
  /// Error(StorageUnavailable) if the journal cannot be written.
  std::string create_task(const TaskSpec& spec);

  /// Throws Error(NotFound).
  Task get_task(const std::string& id, TaskView view) const;
  TaskState get_state(const std::string& id) const;
  bool contains(const std::string& id) const;

  /// page_size 0 selects the default; larger than the maximum is clamped.
  Page list_tasks(const ListFilter& filter, std::size_t page_size,
                  const std::optional<std::string>& page_token, TaskView view) const;

  /// Compare-and-set on the task state. Returns false without side effects
  /// when the stored state differs from `expected_from` or the edge is not a
  /// valid transition. Throws Error(NotFound).
  bool transition_state(const std::string& id, TaskState expected_from, TaskState to);

  /// Throws Error(NotFound).
  void record_log(const std::string& id, const LogUpdate& update);

  /// Ids currently in `state`, oldest first.
  std::vector<std::string> ids_in_state(TaskState state) const;

  std::vector<Transition> transitions() const;
  std::size_t size() const;
  std::size_t capture_limit() const { return options_.capture_limit; }

 private:
  using OrderIndex = std::set<PagePosition, std::greater<>>;

  void replay_journal();
  void append_journal(std::string_view event, const std::string& task_id,
                      const json& payload);
  void apply_log(Task& task, const LogUpdate& update) const;
  Task& find_locked(const std::string& id);
  const Task& find_locked(const std::string& id) const;
  bool transition_locked(Task& task, TaskState expected_from, TaskState to);

  StoreOptions options_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Task> tasks_;
  OrderIndex order_;
  std::vector<Transition> audit_;
  std::ofstream journal_;
};

}  // namespace tes
