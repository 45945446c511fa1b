#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace partsynth {

enum class ErrorCode {
  InvalidTransform,
  ResolutionMismatch,
  EmptyShape,
  DegenerateMesh,
  EmptySurface,
  InvalidSpec,
  InvalidArgument,
  ModelNotReady,
  ShapeMismatch,
  WrongModel,
  InvalidKind,
  StepRange,
  Divergence,
  DeadNode,
  StaleSuggestions,
  IndexOutOfRange,
  DepthLimit,
  Format,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so that
/// the CLI and the HTTP layer can map it to exit codes / status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when training produces a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(int epoch, const std::string& what)
      : Error(ErrorCode::Divergence,
              what + " diverged at epoch " + std::to_string(epoch)),
        epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace partsynth
