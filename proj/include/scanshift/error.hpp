#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scanshift {

enum class ErrorKind {
    // store / cohort
    MissingSlide,
    DimMismatch,
    ZeroNormTile,
    NonFiniteValue,
    CorruptHeader,
    InvalidManifest,
    InvalidCohort,
    IoError,
    EmptyBag,
    ZeroNorm,
    DegeneratePool,
    MissingLabels,
    // geometry
    UnknownScanner,
    SameScanner,
    ShapeMismatch,
    DegenerateVariance,
    TooFewPatients,
    BadK,
    TooFewScanners,
    // mil
    BadHyperparams,
    NonFiniteActivation,
    NonFiniteUpdate,
    NonFiniteLoss,
    ClassTooSmall,
    DegenerateSplit,
    BadCheckpoint,
    // stats
    SingleClass,
    MissingClass,
    TooManyDegenerateResamples,
    IncompleteRatings,
    TooFewPoints,
    InsufficientPairs,
    IncompleteGrid,
    InvalidPredictions,
    // synth
    BadSpec,
    // tile quality
    DegenerateHistogram,
    TooSmall,
    BadImage,
    // cli
    Usage,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library. `kind()` is stable and is what the
/// CLI reports in its machine-readable error object.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace scanshift
