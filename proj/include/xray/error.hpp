#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xray {

enum class ErrorCode {
  MalformedImage,
  UnsupportedFormat,
  ShapeMismatch,
  MissingWeights,
  UnsupportedLayer,
  VersionMismatch,
  CorruptManifest,
  WeightCountMismatch,
  InvalidConfig,
  Divergence,
  EmptyScores,
  DegenerateLabels,
  InvalidOperatingPoint,
  BadClassIndex,
  IncompatibleHead,
  BundleLoadFailure,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedImage: return "MalformedImage";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingWeights: return "MissingWeights";
    case ErrorCode::UnsupportedLayer: return "UnsupportedLayer";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptManifest: return "CorruptManifest";
    case ErrorCode::WeightCountMismatch: return "WeightCountMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::EmptyScores: return "EmptyScores";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::InvalidOperatingPoint: return "InvalidOperatingPoint";
    case ErrorCode::BadClassIndex: return "BadClassIndex";
    case ErrorCode::IncompatibleHead: return "IncompatibleHead";
    case ErrorCode::BundleLoadFailure: return "BundleLoadFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI, the HTTP service) can map it to an exit status or a
/// response without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Input-validation failures, as opposed to runtime failures.
  bool is_validation() const noexcept {
    switch (code_) {
      case ErrorCode::InvalidConfig:
      case ErrorCode::BadClassIndex:
      case ErrorCode::UnsupportedFormat:
      case ErrorCode::MalformedImage:
      case ErrorCode::ShapeMismatch:
      case ErrorCode::IncompatibleHead:
      case ErrorCode::InvalidOperatingPoint:
        return true;
      default:
        return false;
    }
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace xray
