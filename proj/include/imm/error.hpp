#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace imm {

enum class Errc {
    MalformedLine,
    EmptyDialogue,
    UnknownLabelName,
    MalformedRecord,
    InvalidRatios,
    InvalidArgument,
    BackendError,
    NoValidRuns,
    DimensionMismatch,
    RankTooLarge,
    HiddenSizeMismatch,
    EmptyDataset,
    NonFiniteLoss,
    LabelMissing,
    TaskMismatch,
    InsufficientPool,
    LengthMismatch,
    EmptyInput,
    IoFailure,
    MissingCheckpoint,
    ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

// All library failures are reported through this type; code() identifies the contract
// that was violated so callers (and tests) can branch on it.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace imm
