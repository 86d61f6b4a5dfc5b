#include "tes/service.hpp"

#include <httplib.h>

#include <algorithm>
#include <cctype>

#include "tes/error.hpp"

namespace tes {

namespace {

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationFailed:
    case ErrorCode::InvalidJson:
    case ErrorCode::InvalidPageToken:
      return 400;
    case ErrorCode::NotFound:
      return 404;
    case ErrorCode::StorageUnavailable:
      return 503;
    default:
      return 500;
  }
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"message", message}, {"status", status}});
}

/// Runs a handler and converts exceptions into ErrorBody responses.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, status_for(e.code()), e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, std::string("internal error: ") + e.what());
  }
}

TaskView view_param(const httplib::Request& req) {
  if (!req.has_param("view")) return TaskView::Minimal;
  const std::string raw = req.get_param_value("view");
  auto view = parse_task_view(raw);
  if (!view) throw Error(ErrorCode::ValidationFailed, "unknown view '" + raw + "'");
  return *view;
}

std::size_t page_size_param(const httplib::Request& req) {
  if (!req.has_param("page_size")) return 0;
  const std::string raw = req.get_param_value("page_size");
  if (raw.empty() || raw.size() > 9 ||
      !std::all_of(raw.begin(), raw.end(), [](unsigned char c) { return std::isdigit(c); })) {
    throw Error(ErrorCode::ValidationFailed, "page_size must be a non-negative integer");
  }
  return static_cast<std::size_t>(std::stoul(raw));
}

ListFilter filter_params(const httplib::Request& req) {
  ListFilter filter;
  if (req.has_param("state")) {
    const std::string raw = req.get_param_value("state");
    auto state = parse_task_state(raw);
    if (!state) throw Error(ErrorCode::ValidationFailed, "unknown state '" + raw + "'");
    filter.state = state;
  }
  if (req.has_param("name_prefix")) filter.name_prefix = req.get_param_value("name_prefix");
  const auto keys = req.get_param_value_count("tag_key");
  const auto values = req.get_param_value_count("tag_value");
  if (keys != values) {
    throw Error(ErrorCode::ValidationFailed,
                "tag_key and tag_value must be given the same number of times");
  }
  for (std::size_t i = 0; i < keys; ++i) {
    filter.tags[req.get_param_value("tag_key", i)] = req.get_param_value("tag_value", i);
  }
  return filter;
}

std::string regex_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (std::string_view(".^$|()[]{}*+?\\").find(c) != std::string_view::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

}  // namespace

TesService::TesService(TaskStore& store, Worker& worker,
                       std::shared_ptr<const ProtocolRegistry> registry, ServiceConfig config)
    : store_(store),
      worker_(worker),
      registry_(std::move(registry)),
      config_(std::move(config)),
      server_(std::make_unique<httplib::Server>()) {
  while (!config_.path_prefix.empty() && config_.path_prefix.back() == '/') {
    config_.path_prefix.pop_back();
  }
  install_routes();
}

TesService::~TesService() { stop(); }

json TesService::service_info() const {
  return {{"id", config_.id},
          {"name", config_.name},
          {"description", config_.description},
          {"type", {{"group", "org.ga4gh"}, {"artifact", "tes"}, {"version", kTesApiVersion}}},
          {"storage", registry_->supported_protocols()},
          {"version", kImplementationVersion}};
}

void TesService::install_routes() {
  auto& srv = *server_;
  const std::string prefix = regex_escape(config_.path_prefix);

  srv.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (!config_.bearer_token) return httplib::Server::HandlerResponse::Unhandled;
    if (req.get_header_value("Authorization") == "Bearer " + *config_.bearer_token) {
      return httplib::Server::HandlerResponse::Unhandled;
    }
    send_error(res, 401, "missing or invalid bearer token");
    return httplib::Server::HandlerResponse::Handled;
  });

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    send_error(res, res.status,
               res.status == 404 ? "no such endpoint" : httplib::status_message(res.status));
    return httplib::Server::HandlerResponse::Handled;
  });

  srv.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
        send_error(res, 500, "internal error");
      });

  srv.Get(prefix + "/service-info", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, service_info());
  });

  srv.Post(prefix + "/tasks", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::InvalidJson, std::string("malformed JSON: ") + e.what());
      }
      const TaskSpec spec = task_spec_from_json(body);
      const std::string id = store_.create_task(spec);
      worker_.notify();
      send_json(res, 200, {{"id", id}});
    });
  });

  srv.Get(prefix + "/tasks", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const TaskView view = view_param(req);
      const std::size_t page_size = page_size_param(req);
      const ListFilter filter = filter_params(req);
      std::optional<std::string> token;
      if (req.has_param("page_token")) token = req.get_param_value("page_token");
      Page page = store_.list_tasks(filter, page_size, token, view);
      json body = {{"tasks", json::array()}};
      for (const auto& t : page.items) body["tasks"].push_back(t);
      if (page.next_page_token) body["next_page_token"] = *page.next_page_token;
      send_json(res, 200, body);
    });
  });

  srv.Post(prefix + R"(/tasks/([^:/]+):cancel)",
           [this](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               worker_.cancel_task(req.matches[1]);
               send_json(res, 200, json::object());
             });
           });

  srv.Get(prefix + R"(/tasks/([^/]+))", [this](const httplib::Request& req,
                                              httplib::Response& res) {
    guarded(res, [&] {
      const TaskView view = view_param(req);
      send_json(res, 200, json(store_.get_task(req.matches[1], view)));
    });
  });
}

int TesService::bind() {
  if (port_ >= 0) return port_;
  if (config_.port == 0) {
    port_ = server_->bind_to_any_port(config_.host);
  } else {
    port_ = server_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
  }
  if (port_ < 0) {
    throw Error(ErrorCode::TransportError,
                "cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
  return port_;
}

int TesService::start() {
  const int port = bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void TesService::run() {
  bind();
  server_->listen_after_bind();
}

void TesService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string TesService::base_url() const {
  return "http://" + config_.host + ":" + std::to_string(port_) + config_.path_prefix;
}

}  // namespace tes
