#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace factify {

enum class ErrorKind {
  ConfigInvalid,
  MissingColumn,
  MalformedRow,
  FetchFailure,
  DecodeFailure,
  BackendUnavailable,
  EncodingFailure,
  ZeroVector,
  CacheCorrupt,
  ShapeMismatch,
  SchemaMismatch,
  LengthMismatch,
  DegenerateData,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::FetchFailure: return "FetchFailure";
    case ErrorKind::DecodeFailure: return "DecodeFailure";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::EncodingFailure: return "EncodingFailure";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::CacheCorrupt: return "CacheCorrupt";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DegenerateData: return "DegenerateData";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + ": " + detail), kind_(kind), detail_(detail) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

// CLI exit codes: 1 config error, 2 data error, 3 runtime failure.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigInvalid:
      return 1;
    case ErrorKind::MissingColumn:
    case ErrorKind::MalformedRow:
    case ErrorKind::DecodeFailure:
    case ErrorKind::SchemaMismatch:
    case ErrorKind::LengthMismatch:
    case ErrorKind::DegenerateData:
      return 2;
    default:
      return 3;
  }
}

}  // namespace factify
