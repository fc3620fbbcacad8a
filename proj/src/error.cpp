#include "crisp/error.hpp"

namespace crisp {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::TooFewForegroundPixels: return "TooFewForegroundPixels";
        case ErrorCode::MissingImageFile: return "MissingImageFile";
        case ErrorCode::DuplicateInstanceId: return "DuplicateInstanceId";
        case ErrorCode::BadManifest: return "BadManifest";
        case ErrorCode::ImageIo: return "ImageIo";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::UnloadedWeights: return "UnloadedWeights";
        case ErrorCode::EmptyMask: return "EmptyMask";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
        case ErrorCode::ConfigMismatch: return "ConfigMismatch";
        case ErrorCode::AnchorWithoutPositive: return "AnchorWithoutPositive";
        case ErrorCode::NonUnitFeature: return "NonUnitFeature";
        case ErrorCode::InsufficientModels: return "InsufficientModels";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::VersionMismatch: return "VersionMismatch";
        case ErrorCode::TruncatedFile: return "TruncatedFile";
        case ErrorCode::TooManySkipped: return "TooManySkipped";
        case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

}  // namespace crisp
