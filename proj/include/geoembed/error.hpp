#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace geoembed {

enum class ErrorCode {
  GeometryInvalid,
  KeyMismatch,
  DegenerateColumn,
  UnknownRegion,
  PoleInput,
  InvalidArgument,
  ShapeMismatch,
  BatchTooSmall,
  NonFiniteLoss,
  UnsupportedShape,
  DimMismatch,
  NonConvergence,
  RankDeficient,
  DegenerateExtent,
  InsufficientTrainingData,
  ZeroVariance,
  ConfigInvalid,
  MissingArtifact,
  IoError,
  FormatError,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library carries a machine-readable code so
// the CLI can emit structured errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace geoembed
