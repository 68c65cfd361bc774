#include "geoembed/error.hpp"

namespace geoembed {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::GeometryInvalid: return "GeometryInvalid";
    case ErrorCode::KeyMismatch: return "KeyMismatch";
    case ErrorCode::DegenerateColumn: return "DegenerateColumn";
    case ErrorCode::UnknownRegion: return "UnknownRegion";
    case ErrorCode::PoleInput: return "PoleInput";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::UnsupportedShape: return "UnsupportedShape";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DegenerateExtent: return "DegenerateExtent";
    case ErrorCode::InsufficientTrainingData: return "InsufficientTrainingData";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
  }
  return "Unknown";
}

}  // namespace geoembed
