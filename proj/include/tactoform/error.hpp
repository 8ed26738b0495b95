#pragma once

#include <stdexcept>
#include <string>

namespace tactoform {

enum class ErrorCode {
  EmptySurface,
  EmptyCloud,
  BadMagic,
  DimMismatch,
  TruncatedFile,
  IoError,
  DegenerateCalibration,
  InsufficientCalibration,
  ShapeOutOfBounds,
  NoVisiblePixels,
  OutOfBounds,
  RegionTooLarge,
  NoTouchableRegion,
  PlanOutOfBounds,
  BadScene,
  UnknownPrior,
  NotFound,
  Conflict,
  BlockedPlan,
  InvalidArgument,
};

inline const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptySurface: return "EmptySurface";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DegenerateCalibration: return "DegenerateCalibration";
    case ErrorCode::InsufficientCalibration: return "InsufficientCalibration";
    case ErrorCode::ShapeOutOfBounds: return "ShapeOutOfBounds";
    case ErrorCode::NoVisiblePixels: return "NoVisiblePixels";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::RegionTooLarge: return "RegionTooLarge";
    case ErrorCode::NoTouchableRegion: return "NoTouchableRegion";
    case ErrorCode::PlanOutOfBounds: return "PlanOutOfBounds";
    case ErrorCode::BadScene: return "BadScene";
    case ErrorCode::UnknownPrior: return "UnknownPrior";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::BlockedPlan: return "BlockedPlan";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (CLI exit codes, HTTP status mapping) can switch on it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tactoform
