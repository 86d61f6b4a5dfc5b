#include "tes/client.hpp"

#include <httplib.h>

#include <cctype>
#include <cmath>
#include <thread>

namespace tes {

namespace {

std::string percent_encode(const std::string& s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 15]);
    }
  }
  return out;
}

}  // namespace

TesClient::TesClient(ClientConfig config) : config_(std::move(config)) {
  const std::string& url = config_.base_url;
  const auto sep = url.find("://");
  const std::string scheme = sep == std::string::npos ? "" : url.substr(0, sep);
  if (scheme != "http" && scheme != "https") {
    throw Error(ErrorCode::UnparsableUrl, "base URL '" + url + "' is not an http(s) URL");
  }
  const auto path_start = url.find('/', sep + 3);
  origin_ = url.substr(0, path_start);
  if (origin_.size() <= sep + 3) {
    throw Error(ErrorCode::UnparsableUrl, "base URL '" + url + "' has no host");
  }
  prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();

  if (!(config_.timeout_s > 0)) {
    throw Error(ErrorCode::ValidationFailed, "timeout must be positive");
  }
  http_ = std::make_unique<httplib::Client>(origin_);
  const auto whole = static_cast<time_t>(config_.timeout_s);
  const auto micros = static_cast<time_t>(std::llround((config_.timeout_s - whole) * 1e6));
  http_->set_connection_timeout(whole, micros);
  http_->set_read_timeout(whole, micros);
  http_->set_write_timeout(whole, micros);
  if (config_.bearer_token) http_->set_bearer_token_auth(*config_.bearer_token);
}

TesClient::~TesClient() = default;
TesClient::TesClient(TesClient&&) noexcept = default;
TesClient& TesClient::operator=(TesClient&&) noexcept = default;

json TesClient::request(const std::string& method, const std::string& path,
                        const std::vector<std::pair<std::string, std::string>>& params,
                        const std::optional<std::string>& body) {
  std::string target = prefix_ + path;
  char sep = '?';
  for (const auto& [k, v] : params) {
    target += sep + percent_encode(k) + "=" + percent_encode(v);
    sep = '&';
  }
  httplib::Result res = method == "POST"
                            ? http_->Post(target, body.value_or(""), "application/json")
                            : http_->Get(target);
  if (!res) {
    throw Error(ErrorCode::TransportError, method + " " + origin_ + target + ": " +
                                               httplib::to_string(res.error()));
  }
  json parsed;
  try {
    parsed = res->body.empty() ? json::object() : json::parse(res->body);
  } catch (const json::parse_error&) {
    throw HttpStatusError(res->status, "server returned non-JSON body (HTTP " +
                                           std::to_string(res->status) + ")");
  }
  if (res->status < 200 || res->status >= 300) {
    std::string message = "HTTP " + std::to_string(res->status);
    if (parsed.is_object() && parsed.contains("message") && parsed["message"].is_string()) {
      message += ": " + parsed["message"].get<std::string>();
    }
    throw HttpStatusError(res->status, message);
  }
  return parsed;
}

std::string TesClient::create_task(const json& body) {
  const json reply = request("POST", "/tasks", {}, body.dump());
  if (!reply.contains("id") || !reply["id"].is_string()) {
    throw Error(ErrorCode::TransportError, "server reply carries no task id");
  }
  return reply["id"].get<std::string>();
}

std::string TesClient::create_task(const TaskSpec& spec) { return create_task(json(spec)); }

Task TesClient::get_task(const std::string& id, TaskView view) {
  return task_from_json(
      request("GET", "/tasks/" + percent_encode(id), {{"view", std::string(to_string(view))}},
              std::nullopt));
}

TaskListing TesClient::list_tasks(const TaskQuery& query) {
  std::vector<std::pair<std::string, std::string>> params;
  params.emplace_back("view", std::string(to_string(query.view)));
  if (query.page_size) params.emplace_back("page_size", std::to_string(query.page_size));
  if (query.page_token) params.emplace_back("page_token", *query.page_token);
  if (query.filter.state) params.emplace_back("state", std::string(to_string(*query.filter.state)));
  if (query.filter.name_prefix) params.emplace_back("name_prefix", *query.filter.name_prefix);
  for (const auto& [k, v] : query.filter.tags) {
    params.emplace_back("tag_key", k);
    params.emplace_back("tag_value", v);
  }
  const json reply = request("GET", "/tasks", params, std::nullopt);
  TaskListing listing;
  if (auto it = reply.find("tasks"); it != reply.end() && it->is_array()) {
    for (const auto& t : *it) listing.tasks.push_back(task_from_json(t));
  }
  if (auto it = reply.find("next_page_token"); it != reply.end() && it->is_string()) {
    listing.next_page_token = it->get<std::string>();
  }
  return listing;
}

std::vector<Task> TesClient::list_all(TaskQuery query) {
  std::vector<Task> all;
  while (true) {
    TaskListing page = list_tasks(query);
    all.insert(all.end(), std::make_move_iterator(page.tasks.begin()),
               std::make_move_iterator(page.tasks.end()));
    if (!page.next_page_token) return all;
    query.page_token = page.next_page_token;
  }
}

void TesClient::cancel_task(const std::string& id) {
  request("POST", "/tasks/" + percent_encode(id) + ":cancel", {}, std::string("{}"));
}

json TesClient::service_info() { return request("GET", "/service-info", {}, std::nullopt); }

std::optional<TaskState> TesClient::wait(const std::string& id,
                                         std::chrono::milliseconds timeout,
                                         std::chrono::milliseconds poll_interval) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const TaskState state = get_task(id, TaskView::Minimal).state;
    if (is_terminal(state)) return state;
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) return std::nullopt;
    std::this_thread::sleep_for(
        std::min<std::chrono::steady_clock::duration>(poll_interval, deadline - now));
  }
}

}  // namespace tes
