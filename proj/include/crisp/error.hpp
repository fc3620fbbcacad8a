#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace crisp {

// Every failure the library reports carries one of these codes. The CLI
// prints them after "ERROR " and the service maps them to HTTP statuses.
enum class ErrorCode {
    // dataset
    TooFewForegroundPixels,
    MissingImageFile,
    DuplicateInstanceId,
    BadManifest,
    ImageIo,
    // encoder
    ShapeMismatch,
    UnloadedWeights,
    EmptyMask,
    ZeroVector,
    CorruptCheckpoint,
    ConfigMismatch,
    // training
    AnchorWithoutPositive,
    NonUnitFeature,
    InsufficientModels,
    // index
    BadMagic,
    VersionMismatch,
    TruncatedFile,
    TooManySkipped,
    // metrics
    MissingGroundTruth,
    // config / cli / service
    InvalidConfig,
    InvalidArgument,
};

std::string_view to_string(ErrorCode code);

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

}  // namespace crisp
