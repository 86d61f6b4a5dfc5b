#include "tes/error.hpp"

namespace tes {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::InvalidJson: return "InvalidJson";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::InvalidPageToken: return "InvalidPageToken";
    case ErrorCode::StorageUnavailable: return "StorageUnavailable";
    case ErrorCode::UnparsableUrl: return "UnparsableUrl";
    case ErrorCode::UnsupportedProtocol: return "UnsupportedProtocol";
    case ErrorCode::SourceNotFound: return "SourceNotFound";
    case ErrorCode::TransferFailed: return "TransferFailed";
    case ErrorCode::MissingOutput: return "MissingOutput";
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::AdapterFailure: return "AdapterFailure";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::TransportError: return "TransportError";
  }
  return "Unknown";
}

}  // namespace tes
