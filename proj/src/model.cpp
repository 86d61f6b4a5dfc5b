#include "tes/model.hpp"

#include <algorithm>

namespace tes {

namespace {

template <typename Enum, std::size_t N>
std::optional<Enum> lookup(std::string_view text,
                           const std::pair<Enum, std::string_view> (&table)[N]) {
  for (const auto& [value, name] : table) {
    if (name == text) return value;
  }
  return std::nullopt;
}

constexpr std::pair<TaskState, std::string_view> kStateNames[] = {
    {TaskState::Unknown, "UNKNOWN"},
    {TaskState::Queued, "QUEUED"},
    {TaskState::Initializing, "INITIALIZING"},
    {TaskState::Running, "RUNNING"},
    {TaskState::Paused, "PAUSED"},
    {TaskState::Complete, "COMPLETE"},
    {TaskState::ExecutorError, "EXECUTOR_ERROR"},
    {TaskState::SystemError, "SYSTEM_ERROR"},
    {TaskState::Canceling, "CANCELING"},
    {TaskState::Canceled, "CANCELED"},
    {TaskState::Preempted, "PREEMPTED"},
};

constexpr std::pair<TaskView, std::string_view> kViewNames[] = {
    {TaskView::Minimal, "MINIMAL"},
    {TaskView::Basic, "BASIC"},
    {TaskView::Full, "FULL"},
};

constexpr std::pair<FileType, std::string_view> kFileTypeNames[] = {
    {FileType::File, "FILE"},
    {FileType::Directory, "DIRECTORY"},
};

bool is_absolute_path(const std::string& p) { return !p.empty() && p.front() == '/'; }

}  // namespace

std::string_view to_string(TaskState s) {
  for (const auto& [value, name] : kStateNames) {
    if (value == s) return name;
  }
  return "UNKNOWN";
}

std::string_view to_string(TaskView v) {
  for (const auto& [value, name] : kViewNames) {
    if (value == v) return name;
  }
  return "MINIMAL";
}

std::string_view to_string(FileType t) {
  return t == FileType::Directory ? "DIRECTORY" : "FILE";
}

std::optional<TaskState> parse_task_state(std::string_view text) {
  return lookup(text, kStateNames);
}

std::optional<TaskView> parse_task_view(std::string_view text) {
  return lookup(text, kViewNames);
}

std::optional<FileType> parse_file_type(std::string_view text) {
  return lookup(text, kFileTypeNames);
}

std::vector<ValidationError> validate_task_spec(const TaskSpec& spec) {
  std::vector<ValidationError> errors;
  auto fail = [&](std::string field, std::string message) {
    errors.push_back({std::move(field), std::move(message)});
  };

  if (spec.executors.empty()) fail("executors", "must be non-empty");
  for (std::size_t i = 0; i < spec.executors.size(); ++i) {
    const auto& ex = spec.executors[i];
    const std::string at = "executors[" + std::to_string(i) + "]";
    if (ex.command.empty()) fail(at + ".command", "must be non-empty");
    if (ex.workdir && !is_absolute_path(*ex.workdir)) {
      fail(at + ".workdir", "must be an absolute path");
    }
    if (ex.stdin_path && !is_absolute_path(*ex.stdin_path)) {
      fail(at + ".stdin", "must be an absolute path");
    }
    if (ex.stdout_path && !is_absolute_path(*ex.stdout_path)) {
      fail(at + ".stdout", "must be an absolute path");
    }
    if (ex.stderr_path && !is_absolute_path(*ex.stderr_path)) {
      fail(at + ".stderr", "must be an absolute path");
    }
  }

  for (std::size_t i = 0; i < spec.inputs.size(); ++i) {
    const auto& in = spec.inputs[i];
    const std::string at = "inputs[" + std::to_string(i) + "]";
    const bool has_url = !in.url.empty();
    const bool has_content = in.content.has_value();
    if (!has_url && !has_content) {
      fail(at, "url or content required");
    } else if (has_url && has_content) {
      fail(at, "url and content are mutually exclusive");
    }
    if (has_content && in.type == FileType::Directory) {
      fail(at + ".type", "inline content requires type FILE");
    }
    if (!is_absolute_path(in.path)) fail(at + ".path", "must be an absolute path");
  }

  for (std::size_t i = 0; i < spec.outputs.size(); ++i) {
    const auto& out = spec.outputs[i];
    const std::string at = "outputs[" + std::to_string(i) + "]";
    if (out.url.empty()) fail(at + ".url", "must be non-empty");
    if (out.content) fail(at + ".content", "not allowed on outputs");
    if (!is_absolute_path(out.path)) fail(at + ".path", "must be an absolute path");
  }

  for (std::size_t i = 0; i < spec.volumes.size(); ++i) {
    if (!is_absolute_path(spec.volumes[i])) {
      fail("volumes[" + std::to_string(i) + "]", "must be an absolute path");
    }
  }

  if (spec.resources) {
    const auto& r = *spec.resources;
    if (r.cpu_cores && *r.cpu_cores <= 0) fail("resources.cpu_cores", "must be positive");
    if (r.ram_gb && !(*r.ram_gb > 0)) fail("resources.ram_gb", "must be positive");
    if (r.disk_gb && !(*r.disk_gb > 0)) fail("resources.disk_gb", "must be positive");
  }
  return errors;
}

Task apply_view(const Task& task, TaskView view) {
  switch (view) {
    case TaskView::Full:
      return task;
    case TaskView::Minimal: {
      Task minimal;
      minimal.id = task.id;
      minimal.state = task.state;
      return minimal;
    }
    case TaskView::Basic:
      break;
  }
  Task basic = task;
  for (auto& in : basic.spec.inputs) in.content.reset();
  for (auto& log : basic.logs) {
    log.system_logs.clear();
    for (auto& ex : log.executor_logs) {
      ex.stdout_tail.reset();
      ex.stderr_tail.reset();
    }
  }
  return basic;
}

bool is_terminal(TaskState s) {
  switch (s) {
    case TaskState::Complete:
    case TaskState::ExecutorError:
    case TaskState::SystemError:
    case TaskState::Canceled:
    case TaskState::Preempted:
      return true;
    default:
      return false;
  }
}

bool is_valid_transition(TaskState from, TaskState to) {
  using S = TaskState;
  switch (from) {
    case S::Queued:
      return to == S::Initializing || to == S::Canceling || to == S::Canceled ||
             to == S::SystemError;
    case S::Initializing:
      return to == S::Running || to == S::Canceling || to == S::SystemError;
    case S::Running:
      return to == S::Complete || to == S::ExecutorError || to == S::SystemError ||
             to == S::Canceling;
    case S::Canceling:
      return to == S::Canceled;
    default:
      return false;
  }
}

}  // namespace tes
