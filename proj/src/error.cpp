#include "cellscape/error.hpp"

namespace cellscape {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::DuplicateName: return "DuplicateName";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::UnknownColumn: return "UnknownColumn";
        case ErrorCode::UnknownLayer: return "UnknownLayer";
        case ErrorCode::UnknownAnnotation: return "UnknownAnnotation";
        case ErrorCode::UnknownLabel: return "UnknownLabel";
        case ErrorCode::UnknownMarker: return "UnknownMarker";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::MissingColumn: return "MissingColumn";
        case ErrorCode::NonNumericFeature: return "NonNumericFeature";
        case ErrorCode::EmptyFile: return "EmptyFile";
        case ErrorCode::InvertedBox: return "InvertedBox";
        case ErrorCode::FeatureSetMismatch: return "FeatureSetMismatch";
        case ErrorCode::DuplicateSlideLabel: return "DuplicateSlideLabel";
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::NonPositiveCofactor: return "NonPositiveCofactor";
        case ErrorCode::TooFewValues: return "TooFewValues";
        case ErrorCode::InvalidQuantileRange: return "InvalidQuantileRange";
        case ErrorCode::BatchTooSmall: return "BatchTooSmall";
        case ErrorCode::KTooLarge: return "KTooLarge";
        case ErrorCode::NaNInput: return "NaNInput";
        case ErrorCode::DirectedGraphError: return "DirectedGraphError";
        case ErrorCode::NonPositiveRadius: return "NonPositiveRadius";
        case ErrorCode::EmptyRadii: return "EmptyRadii";
        case ErrorCode::SingleLabel: return "SingleLabel";
        case ErrorCode::EmptyGraph: return "EmptyGraph";
        case ErrorCode::EmptyColumn: return "EmptyColumn";
        case ErrorCode::BadBinEdges: return "BadBinEdges";
    }
    return "Unknown";
}

}  // namespace cellscape
