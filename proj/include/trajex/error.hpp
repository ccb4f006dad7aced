// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared by every trajex module. Each failure carries a kind so
// the CLI can map it onto its exit-code contract without string matching.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trajex {

enum class ErrorKind {
    // input / validation failures
    InvalidArgument,
    MissingIndex,
    SchemaMismatch,
    CorruptBlob,
    UnknownStep,
    UnknownTensor,
    ShapeMismatch,
    IoFailure,
    EmptyWindow,
    RankOutOfRange,
    TooFewPoints,
    DimensionMismatch,
    DegenerateInterval,
    BadStepIndex,
    NotAMatrix,
    SizeExceeded,
    MissingStep,
    BadConfig,
    // numerical failures
    ZeroTrajectory,
    NearZeroSingularValue,
    NotSymmetric,
    NoConvergence,
    DegenerateAbscissa,
    SingularSystem,
    DegenerateDirection,
    PowerIterationStall,
};

std::string_view to_string(ErrorKind kind);

/// True for failures caused by the data's numerics rather than malformed input.
bool is_numerical(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), message_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// The message without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace trajex
