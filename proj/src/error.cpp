#include "imm/error.hpp"

namespace imm {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::MalformedLine: return "MalformedLine";
        case Errc::EmptyDialogue: return "EmptyDialogue";
        case Errc::UnknownLabelName: return "UnknownLabelName";
        case Errc::MalformedRecord: return "MalformedRecord";
        case Errc::InvalidRatios: return "InvalidRatios";
        case Errc::InvalidArgument: return "InvalidArgument";
        case Errc::BackendError: return "BackendError";
        case Errc::NoValidRuns: return "NoValidRuns";
        case Errc::DimensionMismatch: return "DimensionMismatch";
        case Errc::RankTooLarge: return "RankTooLarge";
        case Errc::HiddenSizeMismatch: return "HiddenSizeMismatch";
        case Errc::EmptyDataset: return "EmptyDataset";
        case Errc::NonFiniteLoss: return "NonFiniteLoss";
        case Errc::LabelMissing: return "LabelMissing";
        case Errc::TaskMismatch: return "TaskMismatch";
        case Errc::InsufficientPool: return "InsufficientPool";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::EmptyInput: return "EmptyInput";
        case Errc::IoFailure: return "IoFailure";
        case Errc::MissingCheckpoint: return "MissingCheckpoint";
        case Errc::ConfigError: return "ConfigError";
    }
    return "Unknown";
}

}  // namespace imm
