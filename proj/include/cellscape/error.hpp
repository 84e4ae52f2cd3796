#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cellscape {

enum class ErrorCode {
    InvalidArgument,
    DuplicateName,
    LengthMismatch,
    UnknownColumn,
    UnknownLayer,
    UnknownAnnotation,
    UnknownLabel,
    UnknownMarker,
    IoError,
    FormatVersionMismatch,
    ChecksumMismatch,
    MissingColumn,
    NonNumericFeature,
    EmptyFile,
    InvertedBox,
    FeatureSetMismatch,
    DuplicateSlideLabel,
    UnsupportedFormat,
    NonPositiveCofactor,
    TooFewValues,
    InvalidQuantileRange,
    BatchTooSmall,
    KTooLarge,
    NaNInput,
    DirectedGraphError,
    NonPositiveRadius,
    EmptyRadii,
    SingleLabel,
    EmptyGraph,
    EmptyColumn,
    BadBinEdges,
};

std::string_view to_string(ErrorCode code);

// Every error raised by the engine. `field` names the offending parameter,
// column, or flag when one exists so callers can report it precisely.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string message, std::string field = {})
        : std::runtime_error(std::move(message)), code_(code), field_(std::move(field)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& field() const noexcept { return field_; }

private:
    ErrorCode code_;
    std::string field_;
};

}  // namespace cellscape
