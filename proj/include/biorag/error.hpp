#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace biorag {

enum class ErrorCode {
  UnreadableFile,
  MalformedRecord,
  EmptyAfterNormalization,
  DuplicateDocId,
  IoFailure,
  SchemaViolation,
  InvalidConfig,
  EmptyInput,
  ProviderUnreachable,
  DimensionMismatch,
  MalformedResponse,
  HttpError,
  FingerprintMismatch,
  DuplicateChunkId,
  EmptyIndex,
  FormatVersionMismatch,
  CorruptFile,
  EmptyQuery,
  BackendUnreachable,
  BackendError,
  EmptyCompletion,
  EmptyMatrix,
  RowNotNormalized,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code. The
// optional stage names the pipeline step (embed, search, prompt, generate)
// that failed when the error crossed an orchestration boundary.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail, std::string stage = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  const std::string& stage() const noexcept { return stage_; }

  Error with_stage(std::string stage) const;

 private:
  ErrorCode code_;
  std::string detail_;
  std::string stage_;
};

}  // namespace biorag
