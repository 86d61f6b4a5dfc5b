#include "tes/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tes/client.hpp"

namespace tes {

namespace {

json listing_to_json(const std::vector<Task>& tasks, const std::optional<std::string>& token) {
  json body = {{"tasks", json::array()}};
  for (const auto& t : tasks) body["tasks"].push_back(t);
  if (token) body["next_page_token"] = *token;
  return body;
}

TaskView parse_view_or_throw(const std::string& text) {
  auto view = parse_task_view(text);
  if (!view) throw CLI::ValidationError("--view", "expected MINIMAL, BASIC or FULL");
  return *view;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Command-line client for a GA4GH Task Execution Service", "tes-cli"};
  app.require_subcommand(1);

  ClientConfig config;
  if (const char* env = std::getenv("TES_URL"); env && *env) config.base_url = env;
  if (const char* env = std::getenv("TES_TOKEN"); env && *env) config.bearer_token = env;
  app.add_option("--url", config.base_url, "Server base URL (default: $TES_URL)");
  app.add_option("--timeout", config.timeout_s, "Per-request timeout in seconds")
      ->check(CLI::PositiveNumber);
  app.add_option("--token", config.bearer_token, "Bearer token (default: $TES_TOKEN)");

  std::string spec_path;
  auto* submit = app.add_subcommand("submit", "Submit a task JSON file and print its id");
  submit->add_option("file", spec_path, "Task JSON file")->required();

  std::string task_id;
  std::string view_text = "FULL";
  auto* get = app.add_subcommand("get", "Print one task");
  get->add_option("id", task_id)->required();
  get->add_option("--view", view_text, "MINIMAL, BASIC or FULL");

  TaskQuery query;
  std::string list_view = "MINIMAL";
  std::string state_text;
  std::vector<std::string> tag_args;
  std::string name_prefix;
  std::string page_token;
  bool follow = false;
  auto* list = app.add_subcommand("list", "List tasks");
  list->add_option("--state", state_text, "Only tasks in this state");
  list->add_option("--name-prefix", name_prefix, "Only tasks whose name starts with this");
  list->add_option("--tag", tag_args, "KEY=VALUE (or KEY= for presence); repeatable");
  list->add_option("--view", list_view, "MINIMAL, BASIC or FULL");
  list->add_option("--page-size", query.page_size);
  list->add_option("--page-token", page_token);
  list->add_flag("--all", follow, "Follow pagination and print every matching task");

  auto* cancel = app.add_subcommand("cancel", "Cancel a task");
  cancel->add_option("id", task_id)->required();

  double wait_timeout_s = 60.0;
  double poll_interval_s = 0.5;
  auto* wait = app.add_subcommand("wait", "Wait for a task to finish and print its state");
  wait->add_option("id", task_id)->required();
  wait->add_option("--timeout", wait_timeout_s, "Give up after this many seconds (exit 2)")
      ->check(CLI::NonNegativeNumber);
  wait->add_option("--poll-interval", poll_interval_s, "Seconds between polls")
      ->check(CLI::PositiveNumber);

  auto* info = app.add_subcommand("service-info", "Print the server's service-info");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    TesClient client(config);
    if (*submit) {
      std::ifstream in(spec_path);
      if (!in) {
        err << "cannot read " << spec_path << "\n";
        return 1;
      }
      json body;
      try {
        body = json::parse(in);
      } catch (const json::parse_error& e) {
        err << spec_path << ": invalid JSON: " << e.what() << "\n";
        return 1;
      }
      out << client.create_task(body) << "\n";
    } else if (*get) {
      out << json(client.get_task(task_id, parse_view_or_throw(view_text))).dump(2) << "\n";
    } else if (*list) {
      query.view = parse_view_or_throw(list_view);
      if (!state_text.empty()) {
        query.filter.state = parse_task_state(state_text);
        if (!query.filter.state) {
          err << "unknown state '" << state_text << "'\n";
          return 1;
        }
      }
      if (!name_prefix.empty()) query.filter.name_prefix = name_prefix;
      for (const auto& tag : tag_args) {
        const auto eq = tag.find('=');
        query.filter.tags[tag.substr(0, eq)] = eq == std::string::npos ? "" : tag.substr(eq + 1);
      }
      if (!page_token.empty()) query.page_token = page_token;
      if (follow) {
        out << listing_to_json(client.list_all(query), std::nullopt).dump(2) << "\n";
      } else {
        TaskListing page = client.list_tasks(query);
        out << listing_to_json(page.tasks, page.next_page_token).dump(2) << "\n";
      }
    } else if (*cancel) {
      client.cancel_task(task_id);
      out << "{}\n";
    } else if (*wait) {
      auto state = client.wait(
          task_id, std::chrono::milliseconds(std::llround(wait_timeout_s * 1000)),
          std::chrono::milliseconds(std::llround(poll_interval_s * 1000)));
      if (!state) {
        err << "timed out waiting for task " << task_id << "\n";
        return 2;
      }
      out << to_string(*state) << "\n";
      return *state == TaskState::Complete ? 0 : 1;
    } else if (*info) {
      out << client.service_info().dump(2) << "\n";
    }
  } catch (const CLI::ValidationError& e) {
    err << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace tes
