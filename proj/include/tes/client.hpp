#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tes/error.hpp"
#include "tes/json.hpp"
#include "tes/model.hpp"
#include "tes/store.hpp"

namespace httplib {
class Client;
}

namespace tes {

struct ClientConfig {
  std::string base_url = "http://localhost:8000";
  double timeout_s = 30.0;
  std::optional<std::string> bearer_token;
};

/// Non-2xx answer from the server. The message is the server's ErrorBody
/// message when one was sent.
class HttpStatusError : public Error {
 public:
  HttpStatusError(int status, const std::string& message)
      : Error(status == 404 ? ErrorCode::NotFound : ErrorCode::TransportError, message),
        status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct TaskQuery {
  ListFilter filter;
  TaskView view = TaskView::Minimal;
  std::size_t page_size = 0;
  std::optional<std::string> page_token;
};

struct TaskListing {
  std::vector<Task> tasks;
  std::optional<std::string> next_page_token;
};

/// Synchronous client for one TES server. Not safe for concurrent use; make
/// one instance per thread. Transport failures throw Error(TransportError).
class TesClient {
 public:
  explicit TesClient(ClientConfig config);
  ~TesClient();

  TesClient(TesClient&&) noexcept;
  TesClient& operator=(TesClient&&) noexcept;

  std::string create_task(const TaskSpec& spec);
  /// Submits a raw JSON body as-is.
  std::string create_task(const json& body);
  Task get_task(const std::string& id, TaskView view = TaskView::Full);
  TaskListing list_tasks(const TaskQuery& query);
  /// Follows next_page_token until exhausted.
  std::vector<Task> list_all(TaskQuery query);
  void cancel_task(const std::string& id);
  json service_info();

  /// Polls with the MINIMAL view until the task is terminal. Returns nullopt
  /// on timeout.
  std::optional<TaskState> wait(const std::string& id, std::chrono::milliseconds timeout,
                                std::chrono::milliseconds poll_interval =
                                    std::chrono::milliseconds(500));

  const ClientConfig& config() const { return config_; }

 private:
  json request(const std::string& method, const std::string& path,
               const std::vector<std::pair<std::string, std::string>>& params,
               const std::optional<std::string>& body);

  ClientConfig config_;
  std::string origin_;
  std::string prefix_;
  std::unique_ptr<httplib::Client> http_;
};

}  // namespace tes
