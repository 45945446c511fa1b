#include "partsynth/error.hpp"

namespace partsynth {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidTransform: return "invalid_transform";
    case ErrorCode::ResolutionMismatch: return "resolution_mismatch";
    case ErrorCode::EmptyShape: return "empty_shape";
    case ErrorCode::DegenerateMesh: return "degenerate_mesh";
    case ErrorCode::EmptySurface: return "empty_surface";
    case ErrorCode::InvalidSpec: return "invalid_spec";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::ModelNotReady: return "model_not_ready";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::WrongModel: return "wrong_model";
    case ErrorCode::InvalidKind: return "invalid_kind";
    case ErrorCode::StepRange: return "step_range";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::DeadNode: return "dead_node";
    case ErrorCode::StaleSuggestions: return "stale_suggestions";
    case ErrorCode::IndexOutOfRange: return "index_out_of_range";
    case ErrorCode::DepthLimit: return "depth_limit";
    case ErrorCode::Format: return "format";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

}  // namespace partsynth
