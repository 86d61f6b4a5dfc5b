#include "tes/conformance.hpp"

#include <httplib.h>
#include <yaml-cpp/yaml.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "tes/error.hpp"

namespace tes::conformance {

namespace {

using Vars = std::map<std::string, std::string>;

class SchemaContext {
 public:
  SchemaContext(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& node, const std::string& what) const {
    std::string where = source_;
    if (node.IsDefined() && node.Mark().line >= 0) {
      where += ":" + std::to_string(node.Mark().line + 1);
    }
    if (!case_label_.empty()) where += ": " + case_label_;
    throw Error(ErrorCode::SchemaError, where + ": " + what);
  }

  void set_case(std::size_t index, const std::string& name) {
    case_label_ = "case " + std::to_string(index) + (name.empty() ? "" : " (" + name + ")");
  }

 private:
  std::string source_;
  std::string case_label_;
};

/// Plain scalars become typed JSON values; quoted ones stay strings.
json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined:
      return nullptr;
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& item : node) arr.push_back(yaml_to_json(item));
      return arr;
    }
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Scalar:
      break;
  }
  const std::string text = node.Scalar();
  if (node.Tag() == "!") return text;
  if (text == "null" || text == "~") return nullptr;
  if (text == "true") return true;
  if (text == "false") return false;
  static const std::regex integer(R"([-+]?[0-9]+)");
  static const std::regex real(R"([-+]?([0-9]+\.[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?)");
  if (std::regex_match(text, integer)) {
    try {
      return std::stoll(text);
    } catch (const std::out_of_range&) {
      return text;
    }
  }
  if (std::regex_match(text, real)) return std::stod(text);
  return text;
}

std::string scalar_text(const YAML::Node& node) {
  return node.IsScalar() ? node.Scalar() : YAML::Dump(node);
}

std::string required_string(const SchemaContext& ctx, const YAML::Node& parent,
                            const char* key) {
  const YAML::Node node = parent[key];
  if (!node.IsDefined() || node.IsNull()) ctx.fail(parent, std::string("missing '") + key + "'");
  if (!node.IsScalar()) ctx.fail(node, std::string("'") + key + "' must be a string");
  return node.Scalar();
}

double number_or(const SchemaContext& ctx, const YAML::Node& parent, const char* key,
                 double fallback) {
  const YAML::Node node = parent[key];
  if (!node.IsDefined() || node.IsNull()) return fallback;
  const json value = yaml_to_json(node);
  if (!value.is_number()) ctx.fail(node, std::string("'") + key + "' must be a number");
  return value.get<double>();
}

std::vector<json> json_list(const SchemaContext& ctx, const YAML::Node& node, const char* key) {
  if (!node.IsSequence()) ctx.fail(node, std::string("'") + key + "' must be a list");
  std::vector<json> out;
  for (const auto& item : node) out.push_back(yaml_to_json(item));
  return out;
}

void check_pointer(const SchemaContext& ctx, const YAML::Node& node, const std::string& ptr) {
  if (!ptr.empty() && ptr.front() != '/' && ptr.find("${") != 0) {
    ctx.fail(node, "JSON pointer '" + ptr + "' must start with '/'");
  }
}

Assertion parse_assertion(const SchemaContext& ctx, const YAML::Node& node) {
  if (!node.IsMap()) ctx.fail(node, "assertion must be a mapping");
  Assertion a;
  if (node["status"]) {
    const json v = yaml_to_json(node["status"]);
    if (!v.is_number_integer()) ctx.fail(node["status"], "'status' must be an integer");
    a.kind = Assertion::Kind::Status;
    a.status = v.get<int>();
    return a;
  }
  if (node["exists"]) {
    a.kind = Assertion::Kind::Exists;
    a.pointer = scalar_text(node["exists"]);
    check_pointer(ctx, node, a.pointer);
    return a;
  }
  if (node["absent"]) {
    a.kind = Assertion::Kind::Absent;
    a.pointer = scalar_text(node["absent"]);
    check_pointer(ctx, node, a.pointer);
    return a;
  }
  if (!node["pointer"]) {
    ctx.fail(node, "assertion needs one of status, exists, absent or pointer");
  }
  a.pointer = scalar_text(node["pointer"]);
  check_pointer(ctx, node, a.pointer);
  if (node["equals"]) {
    a.kind = Assertion::Kind::Equals;
    a.expected = yaml_to_json(node["equals"]);
  } else if (node["matches"]) {
    a.kind = Assertion::Kind::Matches;
    a.pattern = scalar_text(node["matches"]);
  } else if (node["one_of"]) {
    a.kind = Assertion::Kind::OneOf;
    a.options = json_list(ctx, node["one_of"], "one_of");
  } else {
    ctx.fail(node, "pointer assertion needs equals, matches or one_of");
  }
  return a;
}

/// Collects ${name} references in a string.
void references(const std::string& text, std::set<std::string>& out) {
  std::size_t pos = 0;
  while ((pos = text.find("${", pos)) != std::string::npos) {
    const auto end = text.find('}', pos + 2);
    if (end == std::string::npos) return;
    out.insert(text.substr(pos + 2, end - pos - 2));
    pos = end + 1;
  }
}

void references(const json& value, std::set<std::string>& out) {
  if (value.is_string()) {
    references(value.get<std::string>(), out);
  } else if (value.is_structured()) {
    for (const auto& item : value) references(item, out);
  }
}

json substitute_json(const json& value, const Vars& vars) {
  if (value.is_string()) return substitute(value.get<std::string>(), vars);
  if (value.is_array()) {
    json out = json::array();
    for (const auto& item : value) out.push_back(substitute_json(item, vars));
    return out;
  }
  if (value.is_object()) {
    json out = json::object();
    for (const auto& [k, v] : value.items()) out[k] = substitute_json(v, vars);
    return out;
  }
  return value;
}

const json* resolve(const json& body, const std::string& pointer, std::string* error) {
  try {
    const json::json_pointer ptr(pointer);
    if (!body.contains(ptr)) return nullptr;
    return &body.at(ptr);
  } catch (const json::exception& e) {
    if (error) *error = e.what();
    return nullptr;
  }
}

std::string show(const json& v) { return v.dump(); }

}  // namespace

std::string substitute(const std::string& text, const Vars& vars) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto start = text.find("${", pos);
    if (start == std::string::npos) {
      out.append(text, pos, std::string::npos);
      return out;
    }
    const auto end = text.find('}', start + 2);
    if (end == std::string::npos) {
      out.append(text, pos, std::string::npos);
      return out;
    }
    out.append(text, pos, start - pos);
    const std::string name = text.substr(start + 2, end - start - 2);
    auto it = vars.find(name);
    if (it == vars.end()) throw Error(ErrorCode::SchemaError, "undefined variable ${" + name + "}");
    out += it->second;
    pos = end + 1;
  }
}

Suite parse_suite(const std::string& yaml_text, const std::string& source) {
  SchemaContext ctx(source);
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::SchemaError, source + ": " + e.what());
  }
  if (!root.IsMap()) ctx.fail(root, "suite must be a mapping");

  Suite suite;
  suite.name = root["name"] ? scalar_text(root["name"]) : source;
  if (root["description"]) suite.description = scalar_text(root["description"]);
  if (const auto vars = root["variables"]) {
    if (!vars.IsMap()) ctx.fail(vars, "'variables' must be a mapping");
    for (const auto& kv : vars) suite.variables[kv.first.as<std::string>()] = scalar_text(kv.second);
  }

  const YAML::Node cases = root["cases"];
  if (!cases.IsDefined() || cases.IsNull()) ctx.fail(root, "missing 'cases'");
  if (!cases.IsSequence()) ctx.fail(cases, "'cases' must be a list");

  std::set<std::string> defined{"run_id"};
  for (const auto& [k, v] : suite.variables) defined.insert(k);

  std::size_t index = 0;
  for (const auto& node : cases) {
    Case c;
    ctx.set_case(index, node.IsMap() && node["name"] ? scalar_text(node["name"]) : "");
    if (!node.IsMap()) ctx.fail(node, "case must be a mapping");
    c.name = node["name"] ? scalar_text(node["name"]) : "case " + std::to_string(index);
    if (node["halt_on_fail"]) c.halt_on_fail = node["halt_on_fail"].as<bool>(false);

    const YAML::Node req = node["request"];
    if (!req.IsDefined()) ctx.fail(node, "missing 'request'");
    if (!req.IsMap()) ctx.fail(req, "'request' must be a mapping");
    c.request.method = required_string(ctx, req, "method");
    for (auto& ch : c.request.method) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    static const std::set<std::string> kMethods{"GET", "POST", "PUT", "DELETE", "PATCH"};
    if (!kMethods.count(c.request.method)) {
      ctx.fail(req["method"], "unsupported method '" + c.request.method + "'");
    }
    c.request.path = required_string(ctx, req, "path");
    if (const auto q = req["query"]) {
      if (!q.IsMap()) ctx.fail(q, "'query' must be a mapping");
      for (const auto& kv : q) {
        const std::string key = kv.first.as<std::string>();
        if (kv.second.IsSequence()) {
          for (const auto& item : kv.second) c.request.query.emplace_back(key, scalar_text(item));
        } else {
          c.request.query.emplace_back(key, scalar_text(kv.second));
        }
      }
    }
    if (req["body"]) c.request.body = yaml_to_json(req["body"]);

    if (const auto cap = node["capture"]) {
      if (!cap.IsMap()) ctx.fail(cap, "'capture' must be a mapping");
      for (const auto& kv : cap) {
        c.capture[kv.first.as<std::string>()] = scalar_text(kv.second);
        check_pointer(ctx, kv.second, scalar_text(kv.second));
      }
    }

    if (const auto poll = node["poll"]) {
      if (!poll.IsMap()) ctx.fail(poll, "'poll' must be a mapping");
      PollSpec p;
      p.pointer = required_string(ctx, poll, "pointer");
      check_pointer(ctx, poll, p.pointer);
      if (!poll["equals_one_of"]) ctx.fail(poll, "missing 'equals_one_of'");
      p.equals_one_of = json_list(ctx, poll["equals_one_of"], "equals_one_of");
      p.interval_s = number_or(ctx, poll, "interval_s", 1.0);
      p.timeout_s = number_or(ctx, poll, "timeout_s", 60.0);
      if (!(p.interval_s > 0) || !(p.timeout_s >= 0)) {
        ctx.fail(poll, "poll interval must be positive and timeout non-negative");
      }
      c.poll = std::move(p);
    }

    if (const auto asserts = node["assertions"]) {
      if (!asserts.IsSequence()) ctx.fail(asserts, "'assertions' must be a list");
      for (const auto& a : asserts) c.assertions.push_back(parse_assertion(ctx, a));
    }

    // Every referenced variable must exist before this case runs.
    std::set<std::string> used;
    references(c.request.path, used);
    for (const auto& [k, v] : c.request.query) references(v, used);
    if (c.request.body) references(*c.request.body, used);
    for (const auto& a : c.assertions) {
      references(a.pointer, used);
      references(a.pattern, used);
      references(a.expected, used);
      for (const auto& o : a.options) references(o, used);
    }
    for (const auto& name : used) {
      if (!defined.count(name)) ctx.fail(node, "undefined variable ${" + name + "}");
    }
    for (const auto& [var, ptr] : c.capture) defined.insert(var);

    suite.cases.push_back(std::move(c));
    ++index;
  }
  return suite;
}

Suite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::SchemaError, "cannot read suite " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_suite(buf.str(), path.string());
}

Outcome assert_response(const Response& response, const Assertion& assertion, const Vars& vars) {
  Outcome o;
  std::string ptr_error;
  const std::string pointer = substitute(assertion.pointer, vars);
  switch (assertion.kind) {
    case Assertion::Kind::Status:
      o.passed = response.status == assertion.status;
      if (!o.passed) {
        o.message = "expected status " + std::to_string(assertion.status) + ", got " +
                    std::to_string(response.status);
      }
      return o;
    case Assertion::Kind::Exists:
      o.passed = resolve(response.body, pointer, &ptr_error) != nullptr;
      if (!o.passed) o.message = "expected " + pointer + " to exist" + (ptr_error.empty() ? "" : " (" + ptr_error + ")");
      return o;
    case Assertion::Kind::Absent:
      o.passed = resolve(response.body, pointer, &ptr_error) == nullptr && ptr_error.empty();
      if (!o.passed) o.message = "expected " + pointer + " to be absent";
      return o;
    default:
      break;
  }

  const json* actual = resolve(response.body, pointer, &ptr_error);
  if (!actual) {
    o.message = pointer + " does not exist" + (ptr_error.empty() ? "" : " (" + ptr_error + ")");
    return o;
  }
  switch (assertion.kind) {
    case Assertion::Kind::Equals: {
      const json expected = substitute_json(assertion.expected, vars);
      o.passed = *actual == expected;
      if (!o.passed) {
        o.message = pointer + ": expected " + show(expected) + ", got " + show(*actual);
      }
      break;
    }
    case Assertion::Kind::Matches: {
      const std::string text = actual->is_string() ? actual->get<std::string>() : actual->dump();
      const std::string pattern = substitute(assertion.pattern, vars);
      try {
        o.passed = std::regex_search(text, std::regex(pattern));
      } catch (const std::regex_error& e) {
        o.message = "invalid regex '" + pattern + "': " + e.what();
        return o;
      }
      if (!o.passed) o.message = pointer + ": " + show(*actual) + " does not match /" + pattern + "/";
      break;
    }
    case Assertion::Kind::OneOf: {
      const json options = substitute_json(json(assertion.options), vars);
      o.passed = std::find(options.begin(), options.end(), *actual) != options.end();
      if (!o.passed) o.message = pointer + ": expected one of " + show(options) + ", got " + show(*actual);
      break;
    }
    default:
      break;
  }
  return o;
}

std::size_t Report::pass_count() const {
  return static_cast<std::size_t>(
      std::count_if(cases.begin(), cases.end(), [](const CaseResult& c) { return c.passed; }));
}

std::size_t Report::fail_count() const { return cases.size() - pass_count(); }

json Report::to_json() const {
  json j = {{"suite", suite},
            {"passed", passed()},
            {"pass_count", pass_count()},
            {"fail_count", fail_count()},
            {"seconds", seconds},
            {"cases", json::array()}};
  for (const auto& c : cases) {
    j["cases"].push_back(
        {{"name", c.name}, {"passed", c.passed}, {"messages", c.messages}, {"seconds", c.seconds}});
  }
  return j;
}

namespace {

/// Minimal HTTP session bound to one base URL.
class Session {
 public:
  Session(const std::string& base_url, const RunOptions& options) {
    const auto sep = base_url.find("://");
    if (sep == std::string::npos) {
      throw Error(ErrorCode::UnparsableUrl, "base URL '" + base_url + "' has no scheme");
    }
    const auto path_start = base_url.find('/', sep + 3);
    origin_ = base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    client_ = std::make_unique<httplib::Client>(origin_);
    const auto whole = static_cast<time_t>(options.request_timeout_s);
    const auto micros =
        static_cast<time_t>(std::llround((options.request_timeout_s - whole) * 1e6));
    client_->set_connection_timeout(whole, micros);
    client_->set_read_timeout(whole, micros);
    if (options.bearer_token) client_->set_bearer_token_auth(*options.bearer_token);
  }

  Response send(const RequestSpec& spec, const Vars& vars) {
    std::string target = prefix_ + substitute(spec.path, vars);
    char sep = target.find('?') == std::string::npos ? '?' : '&';
    for (const auto& [k, v] : spec.query) {
      target += sep + httplib::detail::encode_query_param(k) + "=" +
                httplib::detail::encode_query_param(substitute(v, vars));
      sep = '&';
    }
    std::string body;
    if (spec.body) body = substitute_json(*spec.body, vars).dump();
    const std::string type = "application/json";
    httplib::Result res;
    if (spec.method == "GET") {
      res = client_->Get(target);
    } else if (spec.method == "POST") {
      res = client_->Post(target, body, type);
    } else if (spec.method == "PUT") {
      res = client_->Put(target, body, type);
    } else if (spec.method == "PATCH") {
      res = client_->Patch(target, body, type);
    } else {
      res = client_->Delete(target, body, type);
    }
    if (!res) {
      throw Error(ErrorCode::TransportError, spec.method + " " + origin_ + target + ": " +
                                                 httplib::to_string(res.error()));
    }
    Response out;
    out.status = res->status;
    try {
      out.body = res->body.empty() ? json() : json::parse(res->body);
    } catch (const json::parse_error&) {
      out.body = res->body;
    }
    return out;
  }

 private:
  std::string origin_;
  std::string prefix_;
  std::unique_ptr<httplib::Client> client_;
};

std::string random_run_id() {
  std::random_device rd;
  std::uniform_int_distribution<int> digit(0, 35);
  static constexpr char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string id;
  for (int i = 0; i < 10; ++i) id.push_back(kAlphabet[digit(rd)]);
  return id;
}

}  // namespace

Report run_suite(const Suite& suite, const std::string& base_url, const RunOptions& options) {
  using SteadyClock = std::chrono::steady_clock;
  const auto started = SteadyClock::now();
  Report report;
  report.suite = suite.name;

  Vars vars = suite.variables;
  for (const auto& [k, v] : options.variables) vars[k] = v;
  if (!vars.count("run_id")) vars["run_id"] = random_run_id();

  std::optional<Session> session;
  std::string session_error;
  try {
    session.emplace(base_url, options);
  } catch (const Error& e) {
    session_error = e.what();
  }

  bool halted = false;
  std::string halted_by;
  for (const auto& c : suite.cases) {
    CaseResult result;
    result.name = c.name;
    const auto case_start = SteadyClock::now();
    if (halted) {
      result.messages.push_back("not run: halted after failing case '" + halted_by + "'");
      report.cases.push_back(std::move(result));
      continue;
    }
    try {
      if (!session) throw Error(ErrorCode::TransportError, session_error);
      Response response = session->send(c.request, vars);
      if (c.poll) {
        const auto deadline =
            SteadyClock::now() + std::chrono::duration<double>(c.poll->timeout_s);
        const auto interval = std::chrono::duration<double>(c.poll->interval_s);
        while (true) {
          const json* value = resolve(response.body, c.poll->pointer, nullptr);
          const bool done = value && std::find(c.poll->equals_one_of.begin(),
                                               c.poll->equals_one_of.end(),
                                               *value) != c.poll->equals_one_of.end();
          if (done) break;
          if (SteadyClock::now() >= deadline) {
            result.messages.push_back(
                "poll timed out after " + std::to_string(c.poll->timeout_s) + "s waiting for " +
                c.poll->pointer + " in " + show(json(c.poll->equals_one_of)) +
                "; last value: " + (value ? show(*value) : std::string("<absent>")));
            break;
          }
          std::this_thread::sleep_for(interval);
          response = session->send(c.request, vars);
        }
      }
      for (const auto& a : c.assertions) {
        Outcome o = assert_response(response, a, vars);
        if (!o.passed) result.messages.push_back(o.message);
      }
      for (const auto& [var, ptr] : c.capture) {
        const json* value = resolve(response.body, ptr, nullptr);
        if (!value) {
          result.messages.push_back("capture " + var + ": " + ptr + " does not exist");
          continue;
        }
        vars[var] = value->is_string() ? value->get<std::string>() : value->dump();
      }
    } catch (const Error& e) {
      result.messages.push_back(std::string(to_string(e.code())) + ": " + e.what());
    }
    result.passed = result.messages.empty();
    result.seconds = std::chrono::duration<double>(SteadyClock::now() - case_start).count();
    if (!result.passed && c.halt_on_fail) {
      halted = true;
      halted_by = c.name;
    }
    report.cases.push_back(std::move(result));
  }
  report.seconds = std::chrono::duration<double>(SteadyClock::now() - started).count();
  return report;
}

void print_report(const Report& report, std::ostream& out) {
  out << "Suite: " << report.suite << "\n";
  for (const auto& c : report.cases) {
    char timing[32];
    std::snprintf(timing, sizeof timing, "%.2fs", c.seconds);
    out << (c.passed ? "  PASS  " : "  FAIL  ") << c.name << " (" << timing << ")\n";
    for (const auto& m : c.messages) out << "          - " << m << "\n";
  }
  out << report.pass_count() << " passed, " << report.fail_count() << " failed, "
      << report.cases.size() << " total\n";
}

}  // namespace tes::conformance
