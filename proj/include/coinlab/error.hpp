#pragma once

#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace coinlab {

enum class ErrorCode {
  MalformedRecord,
  NonMonotonic,
  BadMagic,
  TruncatedFile,
  IoFailure,
  ConfigInvalid,
  NoPeak,
  InsufficientData,
  DegenerateFit,
  EmptyClass,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::NonMonotonic: return "NonMonotonic";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::NoPeak: return "NoPeak";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::DegenerateFit: return "DegenerateFit";
    case ErrorCode::EmptyClass: return "EmptyClass";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// command line front end can map it onto a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void warn(std::string_view message) {
  std::cerr << "coinlab: warning: " << message << '\n';
}

}  // namespace coinlab
