#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "tes/json.hpp"
#include "tes/service.hpp"

using namespace tes;
using namespace tes::testing;
using namespace std::chrono_literals;

namespace {

LocalServerOptions idle() {
  LocalServerOptions o;
  o.start_worker = false;
  return o;
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.insert(k);
  return keys;
}

std::string post_task(const LocalServer& server, const TaskSpec& spec) {
  const HttpReply r = http_call(server.origin(), "POST", "/tasks", json(spec).dump());
  REQUIRE(r.status == 200);
  return r.parsed()["id"];
}

void check_error_body(const HttpReply& r, int status) {
  CHECK(r.status == status);
  const json body = r.parsed();
  CHECK(body["status"] == status);
  CHECK(body["message"].is_string());
  CHECK_FALSE(body["message"].get<std::string>().empty());
}

}  // namespace

TEST_CASE("service-info") {
  LocalServer server(idle());
  const HttpReply r = http_call(server.origin(), "GET", "/service-info");
  REQUIRE(r.status == 200);
  const json info = r.parsed();
  CHECK(info["type"]["group"] == "org.ga4gh");
  CHECK(info["type"]["artifact"] == "tes");
  CHECK(info["type"]["version"] == kTesApiVersion);
  CHECK(info["storage"] == json::array({"file", "http", "https"}));
  CHECK(info.contains("id"));
  CHECK(info.contains("name"));
  CHECK(info.contains("version"));
}

TEST_CASE("service-info lists registered stub protocols") {
  LocalServerOptions o = idle();
  o.registry = std::make_shared<ProtocolRegistry>(ProtocolRegistry::with_default_handlers());
  o.registry->register_handler(std::make_shared<StubHandler>("s3"));
  o.registry->register_handler(std::make_shared<StubHandler>("ftp"));
  o.registry->register_handler(std::make_shared<StubHandler>("http"));
  LocalServer server(o);
  const json storage = http_call(server.origin(), "GET", "/service-info").parsed()["storage"];
  CHECK(storage == json::array({"file", "ftp", "http", "https", "s3"}));
}

TEST_CASE("create returns only the id") {
  LocalServer server(idle());
  const HttpReply r =
      http_call(server.origin(), "POST", "/tasks", json(shell_task("echo hi")).dump());
  REQUIRE(r.status == 200);
  const json body = r.parsed();
  CHECK(keys_of(body) == std::set<std::string>{"id"});
  CHECK(server.store().get_state(body["id"]) == TaskState::Queued);
}

TEST_CASE("create rejects invalid bodies with 400") {
  LocalServer server(idle());
  const HttpReply no_exec =
      http_call(server.origin(), "POST", "/tasks", R"({"name":"x","executors":[]})");
  check_error_body(no_exec, 400);
  CHECK(no_exec.parsed()["message"].get<std::string>().find("executors") != std::string::npos);

  check_error_body(http_call(server.origin(), "POST", "/tasks", "{not json"), 400);
  check_error_body(http_call(server.origin(), "POST", "/tasks",
                             R"({"executors":[{"image":"a","command":["x"]}],"bogus":1})"),
                   400);
  check_error_body(http_call(server.origin(), "POST", "/tasks",
                             R"({"executors":[{"image":"a","command":"x"}]})"),
                   400);
  check_error_body(
      http_call(server.origin(), "POST", "/tasks",
                R"({"executors":[{"image":"a","command":["x"]}],"inputs":[{"path":"/a"}]})"),
      400);
  CHECK(server.store().size() == 0);
}

TEST_CASE("empty store lists no tasks") {
  LocalServer server(idle());
  const HttpReply r = http_call(server.origin(), "GET", "/tasks");
  REQUIRE(r.status == 200);
  CHECK(r.parsed() == json{{"tasks", json::array()}});
}

TEST_CASE("MINIMAL list entries carry exactly id and state") {
  LocalServer server(idle());
  for (int i = 0; i < 3; ++i) post_task(server, shell_task("true", "m" + std::to_string(i)));
  for (const char* target : {"/tasks", "/tasks?view=MINIMAL"}) {
    const json body = http_call(server.origin(), "GET", target).parsed();
    REQUIRE(body["tasks"].size() == 3);
    for (const auto& t : body["tasks"]) CHECK(keys_of(t) == std::set<std::string>{"id", "state"});
  }
}

TEST_CASE("get task views") {
  LocalServer server;
  const std::string id = post_task(server, shell_task("echo out; echo err >&2"));
  REQUIRE(wait_terminal(server.store(), id, 20s) == TaskState::Complete);

  const json minimal = http_call(server.origin(), "GET", "/tasks/" + id + "?view=MINIMAL").parsed();
  CHECK(minimal == json{{"id", id}, {"state", "COMPLETE"}});
  CHECK(http_call(server.origin(), "GET", "/tasks/" + id).parsed() == minimal);

  const json basic = http_call(server.origin(), "GET", "/tasks/" + id + "?view=BASIC").parsed();
  CHECK(basic["logs"][0]["executor_logs"][0]["exit_code"] == 0);
  CHECK_FALSE(basic["logs"][0]["executor_logs"][0].contains("stdout_tail"));
  CHECK_FALSE(basic["logs"][0]["executor_logs"][0].contains("stderr_tail"));
  CHECK(basic.contains("creation_time"));

  const json full = http_call(server.origin(), "GET", "/tasks/" + id + "?view=FULL").parsed();
  CHECK(full["logs"][0]["executor_logs"][0]["stdout_tail"] == "out\n");
  CHECK(full["logs"][0]["executor_logs"][0]["stderr_tail"] == "err\n");
  CHECK(full["logs"][0]["executor_logs"][0]["exit_code"] == 0);
}

TEST_CASE("submitted spec round-trips through FULL") {
  LocalServer server(idle());
  TaskSpec spec = shell_task("echo hi", "roundtrip");
  spec.description = "d";
  spec.tags = {{"a", "1"}, {"empty", ""}};
  spec.executors[0].env = {{"K", "V"}};
  spec.executors[0].workdir = "/work";
  spec.volumes = {"/vol"};
  IOParameter in;
  in.path = "/in/c";
  in.content = "inline";
  spec.inputs.push_back(in);
  spec.resources = Resources{2, 1.5, std::nullopt, false, {"z1"}, {{"gpu", "1"}}};
  const std::string id = post_task(server, spec);
  const Task got = task_from_json(
      http_call(server.origin(), "GET", "/tasks/" + id + "?view=FULL").parsed());
  CHECK(got.spec == spec);
  CHECK(got.id == id);
  CHECK(got.state == TaskState::Queued);
}

TEST_CASE("list filters match a brute-force oracle over FULL") {
  LocalServer server(idle());
  for (int i = 0; i < 12; ++i) {
    TaskSpec spec = shell_task("true", (i % 3 == 0 ? "alpha-" : "beta-") + std::to_string(i));
    if (i % 2 == 0) spec.tags["team"] = i % 4 == 0 ? "red" : "blue";
    const std::string id = post_task(server, spec);
    if (i % 5 == 0) server.store().transition_state(id, TaskState::Queued, TaskState::Canceled);
  }
  const json full = http_call(server.origin(), "GET", "/tasks?view=FULL").parsed()["tasks"];
  REQUIRE(full.size() == 12);

  auto oracle = [&](const std::function<bool(const json&)>& keep) {
    std::vector<std::string> ids;
    for (const auto& t : full) {
      if (keep(t)) ids.push_back(t["id"]);
    }
    return ids;
  };
  auto ids_of = [&](const std::string& target) {
    std::vector<std::string> ids;
    const json listed = http_call(server.origin(), "GET", target).parsed();
    for (const auto& t : listed["tasks"]) ids.push_back(t["id"]);
    return ids;
  };
  auto tag_is = [](const json& t, const std::string& v) {
    return t.contains("tags") && t["tags"].contains("team") && t["tags"]["team"] == v;
  };

  CHECK(ids_of("/tasks?state=CANCELED") ==
        oracle([](const json& t) { return t["state"] == "CANCELED"; }));
  CHECK(ids_of("/tasks?name_prefix=alpha") ==
        oracle([](const json& t) { return t["name"].get<std::string>().rfind("alpha", 0) == 0; }));
  CHECK(ids_of("/tasks?tag_key=team&tag_value=red") ==
        oracle([&](const json& t) { return tag_is(t, "red"); }));
  CHECK(ids_of("/tasks?tag_key=team&tag_value=red&state=CANCELED&name_prefix=alpha") ==
        oracle([&](const json& t) {
          return tag_is(t, "red") && t["state"] == "CANCELED" &&
                 t["name"].get<std::string>().rfind("alpha", 0) == 0;
        }));
}

TEST_CASE("list pagination over HTTP") {
  LocalServer server(idle());
  std::set<std::string> created;
  for (int i = 0; i < 7; ++i) created.insert(post_task(server, shell_task("true")));
  std::set<std::string> seen;
  std::string target = "/tasks?page_size=3";
  int pages = 0;
  while (true) {
    const json body = http_call(server.origin(), "GET", target).parsed();
    ++pages;
    for (const auto& t : body["tasks"]) CHECK(seen.insert(t["id"].get<std::string>()).second);
    if (!body.contains("next_page_token")) break;
    target = "/tasks?page_size=3&page_token=" + body["next_page_token"].get<std::string>();
  }
  CHECK(pages == 3);
  CHECK(seen == created);
}

TEST_CASE("bad query parameters are 400") {
  LocalServer server(idle());
  post_task(server, shell_task("true"));
  check_error_body(http_call(server.origin(), "GET", "/tasks?view=EVERYTHING"), 400);
  check_error_body(http_call(server.origin(), "GET", "/tasks?page_size=abc"), 400);
  check_error_body(http_call(server.origin(), "GET", "/tasks?page_size=-1"), 400);
  check_error_body(http_call(server.origin(), "GET", "/tasks?page_token=nothex"), 400);
  check_error_body(http_call(server.origin(), "GET", "/tasks?state=DONE"), 400);
  check_error_body(http_call(server.origin(), "GET", "/tasks?tag_key=a&tag_key=b&tag_value=x"), 400);
  CHECK(http_call(server.origin(), "GET", "/tasks?unknown_param=1").status == 200);
  CHECK(http_call(server.origin(), "GET", "/tasks?page_size=0").status == 200);
}

TEST_CASE("unknown task and unknown endpoints are 404 with an error body") {
  LocalServer server(idle());
  check_error_body(http_call(server.origin(), "GET", "/tasks/nope"), 404);
  check_error_body(http_call(server.origin(), "POST", "/tasks/nope:cancel"), 404);
  check_error_body(http_call(server.origin(), "GET", "/nothing/here"), 404);
  CHECK(http_call(server.origin(), "DELETE", "/tasks/x").status >= 400);
}

TEST_CASE("cancel over HTTP") {
  LocalServer server(idle());
  const std::string id = post_task(server, shell_task("true"));
  const HttpReply r = http_call(server.origin(), "POST", "/tasks/" + id + ":cancel");
  CHECK(r.status == 200);
  CHECK(r.parsed() == json::object());
  CHECK(server.store().get_state(id) == TaskState::Canceled);
  // Terminal: still success, state unchanged.
  CHECK(http_call(server.origin(), "POST", "/tasks/" + id + ":cancel").status == 200);
  CHECK(server.store().get_state(id) == TaskState::Canceled);
}

TEST_CASE("path prefix") {
  LocalServerOptions o = idle();
  o.service.path_prefix = "/ga4gh/tes/v1";
  LocalServer server(o);
  CHECK(http_call(server.origin(), "GET", "/ga4gh/tes/v1/service-info").status == 200);
  CHECK(http_call(server.origin(), "GET", "/service-info").status == 404);
  const HttpReply created = http_call(server.origin(), "POST", "/ga4gh/tes/v1/tasks",
                                      json(shell_task("true")).dump());
  REQUIRE(created.status == 200);
  const std::string id = created.parsed()["id"];
  CHECK(http_call(server.origin(), "POST", "/ga4gh/tes/v1/tasks/" + id + ":cancel").status == 200);
  CHECK(server.base_url() == server.origin() + "/ga4gh/tes/v1");
}

TEST_CASE("bearer token") {
  LocalServerOptions o = idle();
  o.service.bearer_token = "s3cret";
  LocalServer server(o);
  check_error_body(http_call(server.origin(), "GET", "/tasks"), 401);
  check_error_body(http_call(server.origin(), "GET", "/tasks", "", {{"Authorization", "Bearer wrong"}}), 401);
  CHECK(http_call(server.origin(), "GET", "/tasks", "", {{"Authorization", "Bearer s3cret"}}).status == 200);
}
