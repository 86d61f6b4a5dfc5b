#include <set>

#include "tes/error.hpp"
#include "tes/json.hpp"

namespace tes {

namespace {

void set_opt_string(json& j, const char* key, const std::optional<std::string>& v) {
  if (v) j[key] = *v;
}

void set_opt_time(json& j, const char* key, const std::optional<Timestamp>& v) {
  if (v) j[key] = format_rfc3339(*v);
}

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::InvalidJson, where + ": " + what);
}

/// Typed field access over one JSON object with a path prefix for messages.
class Reader {
 public:
  Reader(const json& j, std::string where, bool strict)
      : j_(j), where_(std::move(where)), strict_(strict) {
    if (!j_.is_object()) bad(where_.empty() ? "body" : where_, "expected an object");
  }

  void allow(std::initializer_list<const char*> keys) {
    if (!strict_) return;
    const std::set<std::string> known(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!known.count(k)) bad(path(k), "unknown field");
    }
  }

  std::string path(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

  const json* find(const char* key) const {
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  std::optional<std::string> opt_string(const char* key) const {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) bad(path(key), "expected a string");
    return v->get<std::string>();
  }

  std::string string(const char* key) const { return opt_string(key).value_or(""); }

  std::optional<bool> opt_bool(const char* key) const {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) bad(path(key), "expected a boolean");
    return v->get<bool>();
  }

  std::optional<std::int64_t> opt_int(const char* key) const {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) bad(path(key), "expected an integer");
    return v->get<std::int64_t>();
  }

  std::optional<double> opt_number(const char* key) const {
    const json* v = find(key);
    if (!v) return std::nullopt;
    if (!v->is_number()) bad(path(key), "expected a number");
    return v->get<double>();
  }

  std::optional<Timestamp> opt_time(const char* key) const {
    auto s = opt_string(key);
    if (!s) return std::nullopt;
    auto t = parse_rfc3339(*s);
    if (!t) bad(path(key), "expected an RFC 3339 timestamp");
    return t;
  }

  std::vector<std::string> strings(const char* key) const {
    std::vector<std::string> out;
    const json* v = find(key);
    if (!v) return out;
    if (!v->is_array()) bad(path(key), "expected an array");
    for (const auto& e : *v) {
      if (!e.is_string()) bad(path(key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  StringMap string_map(const char* key) const {
    StringMap out;
    const json* v = find(key);
    if (!v) return out;
    if (!v->is_object()) bad(path(key), "expected an object");
    for (const auto& [k, e] : v->items()) {
      if (!e.is_string()) bad(path(key) + "." + k, "expected a string");
      out[k] = e.get<std::string>();
    }
    return out;
  }

  template <typename T, typename Fn>
  std::vector<T> objects(const char* key, Fn&& decode) const {
    std::vector<T> out;
    const json* v = find(key);
    if (!v) return out;
    if (!v->is_array()) bad(path(key), "expected an array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(decode((*v)[i], path(key) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

 private:
  const json& j_;
  std::string where_;
  bool strict_;
};

IOParameter io_from_json(const json& j, const std::string& where, bool strict) {
  Reader r(j, where, strict);
  r.allow({"name", "description", "url", "path", "type", "content"});
  IOParameter p;
  p.name = r.opt_string("name");
  p.description = r.opt_string("description");
  p.url = r.string("url");
  p.path = r.string("path");
  if (auto t = r.opt_string("type")) {
    auto parsed = parse_file_type(*t);
    if (!parsed) bad(r.path("type"), "expected FILE or DIRECTORY");
    p.type = *parsed;
  }
  p.content = r.opt_string("content");
  return p;
}

Resources resources_from_json(const json& j, const std::string& where, bool strict) {
  Reader r(j, where, strict);
  r.allow({"cpu_cores", "ram_gb", "disk_gb", "preemptible", "zones",
           "backend_parameters"});
  Resources res;
  res.cpu_cores = r.opt_int("cpu_cores");
  res.ram_gb = r.opt_number("ram_gb");
  res.disk_gb = r.opt_number("disk_gb");
  res.preemptible = r.opt_bool("preemptible");
  res.zones = r.strings("zones");
  res.backend_parameters = r.string_map("backend_parameters");
  return res;
}

Executor executor_from_json(const json& j, const std::string& where, bool strict) {
  Reader r(j, where, strict);
  r.allow({"image", "command", "workdir", "stdin", "stdout", "stderr", "env",
           "ignore_error"});
  Executor e;
  e.image = r.string("image");
  e.command = r.strings("command");
  e.workdir = r.opt_string("workdir");
  e.stdin_path = r.opt_string("stdin");
  e.stdout_path = r.opt_string("stdout");
  e.stderr_path = r.opt_string("stderr");
  e.env = r.string_map("env");
  e.ignore_error = r.opt_bool("ignore_error").value_or(false);
  return e;
}

void read_spec_fields(const Reader& r, TaskSpec& s, bool strict) {
  s.name = r.opt_string("name");
  s.description = r.opt_string("description");
  s.inputs = r.objects<IOParameter>("inputs", [strict](const json& e, const std::string& w) {
    return io_from_json(e, w, strict);
  });
  s.outputs = r.objects<IOParameter>("outputs", [strict](const json& e, const std::string& w) {
    return io_from_json(e, w, strict);
  });
  if (const json* res = r.find("resources")) {
    s.resources = resources_from_json(*res, r.path("resources"), strict);
  }
  s.executors = r.objects<Executor>("executors", [strict](const json& e, const std::string& w) {
    return executor_from_json(e, w, strict);
  });
  s.volumes = r.strings("volumes");
  s.tags = r.string_map("tags");
}

ExecutorLog executor_log_from(const json& j, const std::string& where) {
  Reader r(j, where, false);
  ExecutorLog l;
  l.start_time = r.opt_time("start_time");
  l.end_time = r.opt_time("end_time");
  l.stdout_tail = r.opt_string("stdout_tail");
  l.stderr_tail = r.opt_string("stderr_tail");
  if (auto c = r.opt_int("exit_code")) l.exit_code = static_cast<int>(*c);
  return l;
}

TaskLog task_log_from(const json& j, const std::string& where) {
  Reader r(j, where, false);
  TaskLog l;
  l.start_time = r.opt_time("start_time");
  l.end_time = r.opt_time("end_time");
  l.executor_logs = r.objects<ExecutorLog>("executor_logs", executor_log_from);
  l.output_files = r.objects<OutputFileLog>(
      "output_files", [](const json& e, const std::string& w) {
        Reader o(e, w, false);
        OutputFileLog f;
        f.url = o.string("url");
        f.path = o.string("path");
        auto size = o.opt_int("size_bytes").value_or(0);
        if (size < 0) bad(o.path("size_bytes"), "must be non-negative");
        f.size_bytes = static_cast<std::uint64_t>(size);
        return f;
      });
  l.system_logs = r.strings("system_logs");
  return l;
}

}  // namespace

void to_json(json& j, const IOParameter& p) {
  j = json::object();
  set_opt_string(j, "name", p.name);
  set_opt_string(j, "description", p.description);
  if (!p.url.empty()) j["url"] = p.url;
  j["path"] = p.path;
  j["type"] = std::string(to_string(p.type));
  set_opt_string(j, "content", p.content);
}

void to_json(json& j, const Resources& r) {
  j = json::object();
  if (r.cpu_cores) j["cpu_cores"] = *r.cpu_cores;
  if (r.ram_gb) j["ram_gb"] = *r.ram_gb;
  if (r.disk_gb) j["disk_gb"] = *r.disk_gb;
  if (r.preemptible) j["preemptible"] = *r.preemptible;
  if (!r.zones.empty()) j["zones"] = r.zones;
  if (!r.backend_parameters.empty()) j["backend_parameters"] = r.backend_parameters;
}

void to_json(json& j, const Executor& e) {
  j = json::object();
  j["image"] = e.image;
  j["command"] = e.command;
  set_opt_string(j, "workdir", e.workdir);
  set_opt_string(j, "stdin", e.stdin_path);
  set_opt_string(j, "stdout", e.stdout_path);
  set_opt_string(j, "stderr", e.stderr_path);
  if (!e.env.empty()) j["env"] = e.env;
  if (e.ignore_error) j["ignore_error"] = true;
}

void to_json(json& j, const TaskSpec& s) {
  j = json::object();
  set_opt_string(j, "name", s.name);
  set_opt_string(j, "description", s.description);
  if (!s.inputs.empty()) j["inputs"] = s.inputs;
  if (!s.outputs.empty()) j["outputs"] = s.outputs;
  if (s.resources) j["resources"] = *s.resources;
  if (!s.executors.empty()) j["executors"] = s.executors;
  if (!s.volumes.empty()) j["volumes"] = s.volumes;
  if (!s.tags.empty()) j["tags"] = s.tags;
}

void to_json(json& j, const ExecutorLog& l) {
  j = json::object();
  set_opt_time(j, "start_time", l.start_time);
  set_opt_time(j, "end_time", l.end_time);
  set_opt_string(j, "stdout_tail", l.stdout_tail);
  set_opt_string(j, "stderr_tail", l.stderr_tail);
  if (l.exit_code) j["exit_code"] = *l.exit_code;
}

void to_json(json& j, const OutputFileLog& l) {
  j = json{{"url", l.url}, {"path", l.path}, {"size_bytes", l.size_bytes}};
}

void to_json(json& j, const TaskLog& l) {
  j = json::object();
  set_opt_time(j, "start_time", l.start_time);
  set_opt_time(j, "end_time", l.end_time);
  if (!l.executor_logs.empty()) j["executor_logs"] = l.executor_logs;
  if (!l.output_files.empty()) j["output_files"] = l.output_files;
  if (!l.system_logs.empty()) j["system_logs"] = l.system_logs;
}

void to_json(json& j, const Task& t) {
  j = json(t.spec);
  j["id"] = t.id;
  j["state"] = std::string(to_string(t.state));
  set_opt_time(j, "creation_time", t.creation_time);
  if (!t.logs.empty()) j["logs"] = t.logs;
}

TaskSpec task_spec_from_json(const json& j) {
  Reader r(j, "", true);
  r.allow({"name", "description", "inputs", "outputs", "resources", "executors",
           "volumes", "tags"});
  TaskSpec s;
  read_spec_fields(r, s, true);
  return s;
}

Task task_from_json(const json& j) {
  Reader r(j, "", false);
  Task t;
  t.id = r.string("id");
  auto state = r.opt_string("state");
  if (state) {
    auto parsed = parse_task_state(*state);
    if (!parsed) bad("state", "unknown task state '" + *state + "'");
    t.state = *parsed;
  }
  t.creation_time = r.opt_time("creation_time");
  read_spec_fields(r, t.spec, false);
  t.logs = r.objects<TaskLog>("logs", task_log_from);
  return t;
}

TaskLog task_log_from_json(const json& j) { return task_log_from(j, "log"); }

ExecutorLog executor_log_from_json(const json& j) {
  return executor_log_from(j, "executor_log");
}

}  // namespace tes
