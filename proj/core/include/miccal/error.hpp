#pragma once

#include <stdexcept>
#include <string>

namespace miccal {

// Error taxonomy. Validation errors mean the inputs are malformed or
// inconsistent with the declared schema; numerical errors mean a solver
// could not produce a usable result from well-formed inputs.
enum class ErrorCode {
  // validation
  SchemaError,
  ConfigInvalid,
  CountMismatch,
  InvalidSignal,
  SignalTooShort,
  MatrixTooSmall,
  InsufficientEquations,
  InsufficientData,
  InsufficientCandidates,
  // numerical
  DegenerateMirrorPair,
  DegenerateConfiguration,
  DegenerateInstance,
  DegenerateGeometry,
  ZeroEnergyFrame,
  NoTracks,
  NoEvents,
  NoConsensus,
  RankDeficient,
  IndefiniteH,
  NoIntersection,
  AmbiguousMirror,
  Diverged,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::InvalidSignal: return "InvalidSignal";
    case ErrorCode::SignalTooShort: return "SignalTooShort";
    case ErrorCode::MatrixTooSmall: return "MatrixTooSmall";
    case ErrorCode::InsufficientEquations: return "InsufficientEquations";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InsufficientCandidates: return "InsufficientCandidates";
    case ErrorCode::DegenerateMirrorPair: return "DegenerateMirrorPair";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::DegenerateInstance: return "DegenerateInstance";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::ZeroEnergyFrame: return "ZeroEnergyFrame";
    case ErrorCode::NoTracks: return "NoTracks";
    case ErrorCode::NoEvents: return "NoEvents";
    case ErrorCode::NoConsensus: return "NoConsensus";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::IndefiniteH: return "IndefiniteH";
    case ErrorCode::NoIntersection: return "NoIntersection";
    case ErrorCode::AmbiguousMirror: return "AmbiguousMirror";
    case ErrorCode::Diverged: return "Diverged";
  }
  return "Unknown";
}

// True for errors that indicate bad inputs rather than a numerical failure.
inline bool is_validation_error(ErrorCode c) {
  switch (c) {
    case ErrorCode::SchemaError:
    case ErrorCode::ConfigInvalid:
    case ErrorCode::CountMismatch:
    case ErrorCode::InvalidSignal:
    case ErrorCode::SignalTooShort:
    case ErrorCode::MatrixTooSmall:
    case ErrorCode::InsufficientEquations:
    case ErrorCode::InsufficientData:
    case ErrorCode::InsufficientCandidates:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace miccal
