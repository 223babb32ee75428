#include "biorag/error.hpp"

namespace biorag {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::EmptyAfterNormalization: return "EmptyAfterNormalization";
    case ErrorCode::DuplicateDocId: return "DuplicateDocId";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ProviderUnreachable: return "ProviderUnreachable";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::HttpError: return "HttpError";
    case ErrorCode::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorCode::DuplicateChunkId: return "DuplicateChunkId";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::EmptyQuery: return "EmptyQuery";
    case ErrorCode::BackendUnreachable: return "BackendUnreachable";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::EmptyCompletion: return "EmptyCompletion";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::RowNotNormalized: return "RowNotNormalized";
  }
  return "Unknown";
}

namespace {

std::string format_message(ErrorCode code, const std::string& detail, const std::string& stage) {
  std::string msg(to_string(code));
  if (!stage.empty()) msg += " [" + stage + "]";
  if (!detail.empty()) msg += ": " + detail;
  return msg;
}

}  // namespace

Error::Error(ErrorCode code, std::string detail, std::string stage)
    : std::runtime_error(format_message(code, detail, stage)),
      code_(code),
      detail_(std::move(detail)),
      stage_(std::move(stage)) {}

Error Error::with_stage(std::string stage) const { return Error(code_, detail_, std::move(stage)); }

}  // namespace biorag
