#include "tes/store.hpp"

#include <algorithm>
#include <charconv>
#include <mutex>
#include <random>

#include "tes/error.hpp"

namespace tes {

namespace {

constexpr char kBase32[] = "abcdefghijklmnopqrstuvwxyz234567";
constexpr char kHex[] = "0123456789abcdef";

bool matches(const Task& t, const ListFilter& f) {
  if (f.state && t.state != *f.state) return false;
  if (f.name_prefix) {
    const std::string& name = t.spec.name ? *t.spec.name : std::string();
    if (name.compare(0, f.name_prefix->size(), *f.name_prefix) != 0) return false;
  }
  for (const auto& [key, value] : f.tags) {
    auto it = t.spec.tags.find(key);
    if (it == t.spec.tags.end()) return false;
    if (!value.empty() && it->second != value) return false;
  }
  return true;
}

void keep_tail(std::string& s, std::size_t limit) {
  if (s.size() > limit) s.erase(0, s.size() - limit);
}

}  // namespace

std::string generate_task_id() {
  thread_local std::mt19937_64 rng{[] {
    std::random_device rd;
    std::seed_seq seq{rd(), rd(), rd(), rd(), rd(), rd(), rd(), rd()};
    return std::mt19937_64(seq);
  }()};
  unsigned __int128 bits = (static_cast<unsigned __int128>(rng()) << 64) | rng();
  // 26 base-32 digits cover 130 bits; the leading digit carries the top 3.
  std::string id(26, 'a');
  for (int i = 25; i >= 0; --i) {
    id[static_cast<std::size_t>(i)] = kBase32[static_cast<unsigned>(bits & 31u)];
    bits >>= 5;
  }
  return id;
}

std::string encode_page_token(const PagePosition& pos) {
  const std::string raw = std::to_string(pos.creation_us) + ":" + pos.id;
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 15]);
  }
  return out;
}

PagePosition decode_page_token(std::string_view token) {
  auto invalid = [&] {
    return Error(ErrorCode::InvalidPageToken, "invalid page token '" + std::string(token) + "'");
  };
  if (token.empty() || token.size() % 2 != 0) throw invalid();
  std::string raw;
  raw.reserve(token.size() / 2);
  for (std::size_t i = 0; i < token.size(); i += 2) {
    unsigned value = 0;
    auto [p, ec] = std::from_chars(token.data() + i, token.data() + i + 2, value, 16);
    if (ec != std::errc{} || p != token.data() + i + 2) throw invalid();
    raw.push_back(static_cast<char>(value));
  }
  const auto colon = raw.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == raw.size()) throw invalid();
  PagePosition pos;
  auto [p, ec] = std::from_chars(raw.data(), raw.data() + colon, pos.creation_us);
  if (ec != std::errc{} || p != raw.data() + colon) throw invalid();
  pos.id = raw.substr(colon + 1);
  return pos;
}

json log_update_to_json(const LogUpdate& u) {
  json j = json::object();
  if (u.start_time) j["start_time"] = format_rfc3339(*u.start_time);
  if (u.end_time) j["end_time"] = format_rfc3339(*u.end_time);
  if (!u.executor_logs.empty()) {
    json entries = json::array();
    for (const auto& [index, log] : u.executor_logs) {
      entries.push_back({{"index", index}, {"log", log}});
    }
    j["executor_logs"] = std::move(entries);
  }
  if (!u.output_files.empty()) j["output_files"] = u.output_files;
  if (!u.system_logs.empty()) j["system_logs"] = u.system_logs;
  return j;
}

LogUpdate log_update_from_json(const json& j) {
  // Reuse the TaskLog decoder for the shared fields.
  json shared = j;
  shared.erase("executor_logs");
  TaskLog base = task_log_from_json(shared);
  LogUpdate u;
  u.start_time = base.start_time;
  u.end_time = base.end_time;
  u.output_files = std::move(base.output_files);
  u.system_logs = std::move(base.system_logs);
  if (auto it = j.find("executor_logs"); it != j.end()) {
    for (const auto& entry : *it) {
      u.executor_logs[entry.at("index").get<std::size_t>()] =
          executor_log_from_json(entry.at("log"));
    }
  }
  return u;
}

TaskStore::TaskStore(StoreOptions options) : options_(std::move(options)) {
  if (!options_.journal_path) return;
  if (std::filesystem::exists(*options_.journal_path)) replay_journal();
  journal_.open(*options_.journal_path, std::ios::app);
  if (!journal_) {
    throw Error(ErrorCode::StorageUnavailable,
                "cannot open journal " + options_.journal_path->string());
  }
  // Tasks that were mid-flight when the previous process stopped cannot be
  // resumed.
  std::unique_lock lock(mutex_);
  for (auto& [id, task] : tasks_) {
    if (task.state == TaskState::Initializing || task.state == TaskState::Running) {
      const TaskState from = task.state;
      LogUpdate note;
      note.system_logs.push_back("task interrupted by service restart");
      note.end_time = now_utc();
      apply_log(task, note);
      append_journal("log", id, log_update_to_json(note));
      transition_locked(task, from, TaskState::SystemError);
    } else if (task.state == TaskState::Canceling) {
      transition_locked(task, TaskState::Canceling, TaskState::Canceled);
    }
  }
}

void TaskStore::replay_journal() {
  std::ifstream in(*options_.journal_path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json record = json::parse(line);
      const std::string event = record.at("event").get<std::string>();
      const std::string id = record.at("task_id").get<std::string>();
      const json& payload = record.at("payload");
      if (event == "created") {
        Task task = task_from_json(payload);
        order_.insert({to_micros(task.creation_time.value_or(Timestamp{})), id});
        tasks_[id] = std::move(task);
      } else if (event == "transition") {
        auto to = parse_task_state(payload.at("to").get<std::string>());
        auto from = parse_task_state(payload.at("from").get<std::string>());
        auto it = tasks_.find(id);
        if (it == tasks_.end() || !to || !from) continue;
        it->second.state = *to;
        audit_.push_back({id, *from, *to});
      } else if (event == "log") {
        auto it = tasks_.find(id);
        if (it != tasks_.end()) apply_log(it->second, log_update_from_json(payload));
      }
    } catch (const std::exception& e) {
      throw Error(ErrorCode::StorageUnavailable,
                  "corrupt journal line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void TaskStore::append_journal(std::string_view event, const std::string& task_id,
                               const json& payload) {
  if (!journal_.is_open()) return;
  const json record = {{"event", event},
                       {"task_id", task_id},
                       {"payload", payload},
                       {"timestamp", format_rfc3339(now_utc())}};
  journal_ << record.dump() << '\n';
  journal_.flush();
  if (!journal_) {
    throw Error(ErrorCode::StorageUnavailable, "failed to append to the task journal");
  }
}

std::string TaskStore::create_task(const TaskSpec& spec) {
  if (auto errors = validate_task_spec(spec); !errors.empty()) {
    throw Error(ErrorCode::ValidationFailed, errors.front().field + ": " + errors.front().message);
  }
  Task task;
  task.state = TaskState::Queued;
  task.creation_time = now_utc();
  task.spec = spec;

  std::unique_lock lock(mutex_);
  do {
    task.id = generate_task_id();
  } while (tasks_.count(task.id));
  append_journal("created", task.id, json(task));
  order_.insert({to_micros(*task.creation_time), task.id});
  const std::string id = task.id;
  tasks_.emplace(id, std::move(task));
  return id;
}

Task& TaskStore::find_locked(const std::string& id) {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) throw Error(ErrorCode::NotFound, "task '" + id + "' not found");
  return it->second;
}

const Task& TaskStore::find_locked(const std::string& id) const {
  auto it = tasks_.find(id);
  if (it == tasks_.end()) throw Error(ErrorCode::NotFound, "task '" + id + "' not found");
  return it->second;
}

Task TaskStore::get_task(const std::string& id, TaskView view) const {
  std::shared_lock lock(mutex_);
  return apply_view(find_locked(id), view);
}

TaskState TaskStore::get_state(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return find_locked(id).state;
}

bool TaskStore::contains(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return tasks_.count(id) != 0;
}

Page TaskStore::list_tasks(const ListFilter& filter, std::size_t page_size,
                           const std::optional<std::string>& page_token,
                           TaskView view) const {
  if (page_size == 0) page_size = kDefaultPageSize;
  page_size = std::min(page_size, kMaxPageSize);

  std::optional<PagePosition> after;
  if (page_token && !page_token->empty()) after = decode_page_token(*page_token);

  std::shared_lock lock(mutex_);
  auto it = after ? order_.upper_bound(*after) : order_.begin();
  Page page;
  std::optional<PagePosition> last;
  for (; it != order_.end(); ++it) {
    const Task& task = tasks_.at(it->id);
    if (!matches(task, filter)) continue;
    if (page.items.size() == page_size) {
      // A further match exists, so hand out a continuation token.
      page.next_page_token = encode_page_token(*last);
      break;
    }
    page.items.push_back(apply_view(task, view));
    last = *it;
  }
  return page;
}

bool TaskStore::transition_locked(Task& task, TaskState expected_from, TaskState to) {
  if (task.state != expected_from || !is_valid_transition(expected_from, to)) return false;
  append_journal("transition", task.id,
                 {{"from", to_string(expected_from)}, {"to", to_string(to)}});
  task.state = to;
  audit_.push_back({task.id, expected_from, to});
  return true;
}

bool TaskStore::transition_state(const std::string& id, TaskState expected_from,
                                 TaskState to) {
  std::unique_lock lock(mutex_);
  return transition_locked(find_locked(id), expected_from, to);
}

void TaskStore::apply_log(Task& task, const LogUpdate& update) const {
  if (task.logs.empty()) task.logs.emplace_back();
  TaskLog& log = task.logs.front();
  if (update.start_time) log.start_time = update.start_time;
  if (update.end_time) log.end_time = update.end_time;
  for (const auto& [index, entry] : update.executor_logs) {
    if (log.executor_logs.size() <= index) log.executor_logs.resize(index + 1);
    ExecutorLog& target = log.executor_logs[index];
    if (entry.start_time) target.start_time = entry.start_time;
    if (entry.end_time) target.end_time = entry.end_time;
    if (entry.exit_code) target.exit_code = entry.exit_code;
    if (entry.stdout_tail) {
      target.stdout_tail = target.stdout_tail.value_or("") + *entry.stdout_tail;
      keep_tail(*target.stdout_tail, options_.capture_limit);
    }
    if (entry.stderr_tail) {
      target.stderr_tail = target.stderr_tail.value_or("") + *entry.stderr_tail;
      keep_tail(*target.stderr_tail, options_.capture_limit);
    }
  }
  log.output_files.insert(log.output_files.end(), update.output_files.begin(),
                          update.output_files.end());
  log.system_logs.insert(log.system_logs.end(), update.system_logs.begin(),
                         update.system_logs.end());
}

void TaskStore::record_log(const std::string& id, const LogUpdate& update) {
  std::unique_lock lock(mutex_);
  Task& task = find_locked(id);
  append_journal("log", id, log_update_to_json(update));
  apply_log(task, update);
}

std::vector<std::string> TaskStore::ids_in_state(TaskState state) const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> ids;
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    if (tasks_.at(it->id).state == state) ids.push_back(it->id);
  }
  return ids;
}

std::vector<Transition> TaskStore::transitions() const {
  std::shared_lock lock(mutex_);
  return audit_;
}

std::size_t TaskStore::size() const {
  std::shared_lock lock(mutex_);
  return tasks_.size();
}

}  // namespace tes
