#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tes/json.hpp"

namespace tes::conformance {

struct RequestSpec {
  std::string method;
  std::string path;
  /// Ordered; a key may repeat (e.g. tag_key).
  std::vector<std::pair<std::string, std::string>> query;
  std::optional<json> body;
};

struct PollSpec {
  std::string pointer;
  std::vector<json> equals_one_of;
  double interval_s = 1.0;
  double timeout_s = 60.0;
};

struct Assertion {
  enum class Kind { Status, Exists, Absent, Equals, Matches, OneOf };

  Kind kind = Kind::Status;
  int status = 0;
  std::string pointer;
  json expected;              // Equals
  std::string pattern;        // Matches
  std::vector<json> options;  // OneOf
};

struct Case {
  std::string name;
  RequestSpec request;
  std::map<std::string, std::string> capture;  // variable -> JSON pointer
  std::optional<PollSpec> poll;
  std::vector<Assertion> assertions;
  bool halt_on_fail = false;
};

struct Suite {
  std::string name;
  std::string description;
  std::map<std::string, std::string> variables;
  std::vector<Case> cases;
};

/// Parses suite YAML. Throws Error(SchemaError) naming the case index, the
/// field and the source line.
Suite parse_suite(const std::string& yaml_text, const std::string& source = "<suite>");
Suite load_suite(const std::filesystem::path& path);

struct Response {
  int status = 0;
  json body;
};

struct Outcome {
  bool passed = false;
  std::string message;
};

/// Replaces every ${name}. Throws Error(SchemaError) for undefined names.
std::string substitute(const std::string& text, const std::map<std::string, std::string>& vars);

Outcome assert_response(const Response& response, const Assertion& assertion,
                        const std::map<std::string, std::string>& variables);

struct CaseResult {
  std::string name;
  bool passed = false;
  std::vector<std::string> messages;
  double seconds = 0;
};

struct Report {
  std::string suite;
  std::vector<CaseResult> cases;
  double seconds = 0;

  std::size_t pass_count() const;
  std::size_t fail_count() const;
  bool passed() const { return fail_count() == 0; }
  json to_json() const;
};

struct RunOptions {
  std::optional<std::string> bearer_token;
  double request_timeout_s = 30.0;
  /// Overrides for suite variables.
  std::map<std::string, std::string> variables;
};

/// Executes the cases in order. Failed cases do not stop the run unless
/// marked halt_on_fail; cases skipped because of a halt count as failed.
Report run_suite(const Suite& suite, const std::string& base_url, const RunOptions& options = {});

void print_report(const Report& report, std::ostream& out);

}  // namespace tes::conformance
