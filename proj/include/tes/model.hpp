#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tes/time.hpp"

namespace tes {

enum class TaskState {
  Unknown,
  Queued,
  Initializing,
  Running,
  Paused,
  Complete,
  ExecutorError,
  SystemError,
  Canceling,
  Canceled,
  Preempted,
};

inline constexpr TaskState kAllTaskStates[] = {
    TaskState::Unknown,      TaskState::Queued,        TaskState::Initializing,
    TaskState::Running,      TaskState::Paused,        TaskState::Complete,
    TaskState::ExecutorError, TaskState::SystemError,  TaskState::Canceling,
    TaskState::Canceled,     TaskState::Preempted,
};

enum class TaskView { Minimal, Basic, Full };

enum class FileType { File, Directory };

std::string_view to_string(TaskState s);
std::string_view to_string(TaskView v);
std::string_view to_string(FileType t);
std::optional<TaskState> parse_task_state(std::string_view text);
std::optional<TaskView> parse_task_view(std::string_view text);
std::optional<FileType> parse_file_type(std::string_view text);

using StringMap = std::map<std::string, std::string>;

struct IOParameter {
  std::optional<std::string> name;
  std::optional<std::string> description;
  std::string url;
  std::string path;
  FileType type = FileType::File;
  std::optional<std::string> content;

  bool operator==(const IOParameter&) const = default;
};

struct Resources {
  std::optional<std::int64_t> cpu_cores;
  std::optional<double> ram_gb;
  std::optional<double> disk_gb;
  std::optional<bool> preemptible;
  std::vector<std::string> zones;
  StringMap backend_parameters;

  bool operator==(const Resources&) const = default;
};

struct Executor {
  std::string image;
  std::vector<std::string> command;
  std::optional<std::string> workdir;
  std::optional<std::string> stdin_path;
  std::optional<std::string> stdout_path;
  std::optional<std::string> stderr_path;
  StringMap env;
  bool ignore_error = false;

  bool operator==(const Executor&) const = default;
};

/// The client-submitted part of a task.
struct TaskSpec {
  std::optional<std::string> name;
  std::optional<std::string> description;
  std::vector<IOParameter> inputs;
  std::vector<IOParameter> outputs;
  std::optional<Resources> resources;
  std::vector<Executor> executors;
  std::vector<std::string> volumes;
  StringMap tags;

  bool operator==(const TaskSpec&) const = default;
};

struct ExecutorLog {
  std::optional<Timestamp> start_time;
  std::optional<Timestamp> end_time;
  std::optional<std::string> stdout_tail;
  std::optional<std::string> stderr_tail;
  std::optional<int> exit_code;

  bool operator==(const ExecutorLog&) const = default;
};

struct OutputFileLog {
  std::string url;
  std::string path;
  std::uint64_t size_bytes = 0;

  bool operator==(const OutputFileLog&) const = default;
};

struct TaskLog {
  std::optional<Timestamp> start_time;
  std::optional<Timestamp> end_time;
  std::vector<ExecutorLog> executor_logs;
  std::vector<OutputFileLog> output_files;
  std::vector<std::string> system_logs;

  bool operator==(const TaskLog&) const = default;
};

/// A stored task: the submitted spec plus server-assigned fields. Views may
/// blank out any part except id and state.
struct Task {
  std::string id;
  TaskState state = TaskState::Unknown;
  std::optional<Timestamp> creation_time;
  TaskSpec spec;
  std::vector<TaskLog> logs;

  bool operator==(const Task&) const = default;
};

struct ValidationError {
  std::string field;
  std::string message;

  bool operator==(const ValidationError&) const = default;
};

/// Every invariant violation in `spec`; empty means the spec is admissible.
std::vector<ValidationError> validate_task_spec(const TaskSpec& spec);

/// Projects a task to the requested detail level.
///   MINIMAL  id and state only
///   BASIC    everything except executor stdout/stderr tails, input content
///            and system logs
///   FULL     unchanged
Task apply_view(const Task& task, TaskView view);

bool is_terminal(TaskState s);
bool is_valid_transition(TaskState from, TaskState to);

}  // namespace tes
