#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tes {

enum class ErrorCode {
  ValidationFailed,
  InvalidJson,
  NotFound,
  InvalidPageToken,
  StorageUnavailable,
  UnparsableUrl,
  UnsupportedProtocol,
  SourceNotFound,
  TransferFailed,
  MissingOutput,
  InvalidPath,
  AdapterFailure,
  SchemaError,
  TransportError,
};

std::string_view to_string(ErrorCode code);

/// Exception type used throughout the library. The code identifies the
/// failure class so callers (HTTP layer, worker) can map it without parsing
/// the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tes
