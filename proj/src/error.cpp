// SPDX-License-Identifier: Apache-2.0

#include "trajex/error.hpp"

namespace trajex {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::MissingIndex: return "MissingIndex";
        case ErrorKind::SchemaMismatch: return "SchemaMismatch";
        case ErrorKind::CorruptBlob: return "CorruptBlob";
        case ErrorKind::UnknownStep: return "UnknownStep";
        case ErrorKind::UnknownTensor: return "UnknownTensor";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::IoFailure: return "IoFailure";
        case ErrorKind::EmptyWindow: return "EmptyWindow";
        case ErrorKind::RankOutOfRange: return "RankOutOfRange";
        case ErrorKind::TooFewPoints: return "TooFewPoints";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::DegenerateInterval: return "DegenerateInterval";
        case ErrorKind::BadStepIndex: return "BadStepIndex";
        case ErrorKind::NotAMatrix: return "NotAMatrix";
        case ErrorKind::SizeExceeded: return "SizeExceeded";
        case ErrorKind::MissingStep: return "MissingStep";
        case ErrorKind::BadConfig: return "BadConfig";
        case ErrorKind::ZeroTrajectory: return "ZeroTrajectory";
        case ErrorKind::NearZeroSingularValue: return "NearZeroSingularValue";
        case ErrorKind::NotSymmetric: return "NotSymmetric";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::DegenerateAbscissa: return "DegenerateAbscissa";
        case ErrorKind::SingularSystem: return "SingularSystem";
        case ErrorKind::DegenerateDirection: return "DegenerateDirection";
        case ErrorKind::PowerIterationStall: return "PowerIterationStall";
    }
    return "Unknown";
}

bool is_numerical(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ZeroTrajectory:
        case ErrorKind::NearZeroSingularValue:
        case ErrorKind::NotSymmetric:
        case ErrorKind::NoConvergence:
        case ErrorKind::DegenerateAbscissa:
        case ErrorKind::SingularSystem:
        case ErrorKind::DegenerateDirection:
        case ErrorKind::PowerIterationStall:
            return true;
        default:
            return false;
    }
}

}  // namespace trajex
