#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace anameta {

enum class ErrorCode {
  MalformedInput,
  EmptyTable,
  DuplicateType,
  EmptyVocabulary,
  MissingVocabulary,
  MissingMapping,
  IndexOutOfRange,
  UnknownAggFunction,
  DegenerateLabels,
  LayoutMismatch,
  ShapeMismatch,
  NonFiniteActivation,
  NonFiniteLoss,
  EmptyColumn,
  EmptyEvaluation,
  NoPositives,
  SplitLeakage,
  CheckpointMismatch,
  Io,
};

constexpr std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedInput: return "MalformedInput";
    case ErrorCode::EmptyTable: return "EmptyTable";
    case ErrorCode::DuplicateType: return "DuplicateType";
    case ErrorCode::EmptyVocabulary: return "EmptyVocabulary";
    case ErrorCode::MissingVocabulary: return "MissingVocabulary";
    case ErrorCode::MissingMapping: return "MissingMapping";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::UnknownAggFunction: return "UnknownAggFunction";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyColumn: return "EmptyColumn";
    case ErrorCode::EmptyEvaluation: return "EmptyEvaluation";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::SplitLeakage: return "SplitLeakage";
    case ErrorCode::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace anameta
