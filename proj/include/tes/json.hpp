#pragma once

#include <nlohmann/json.hpp>

#include "tes/model.hpp"

namespace tes {

using json = nlohmann::json;

// Wire encoding: snake_case keys, RFC 3339 timestamps, absent optionals and
// empty collections omitted.
void to_json(json& j, const IOParameter& p);
void to_json(json& j, const Resources& r);
void to_json(json& j, const Executor& e);
void to_json(json& j, const TaskSpec& s);
void to_json(json& j, const ExecutorLog& l);
void to_json(json& j, const OutputFileLog& l);
void to_json(json& j, const TaskLog& l);
void to_json(json& j, const Task& t);

/// Strict decoding of a client submission: unknown keys and wrong types
/// throw Error(InvalidJson). No invariant checks (see validate_task_spec).
TaskSpec task_spec_from_json(const json& j);

/// Decodes a server-produced task. Unknown keys are ignored.
Task task_from_json(const json& j);

TaskLog task_log_from_json(const json& j);
ExecutorLog executor_log_from_json(const json& j);

}  // namespace tes
