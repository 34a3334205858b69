#include "scanshift/error.hpp"

namespace scanshift {

std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MissingSlide: return "MissingSlide";
        case ErrorKind::DimMismatch: return "DimMismatch";
        case ErrorKind::ZeroNormTile: return "ZeroNormTile";
        case ErrorKind::NonFiniteValue: return "NonFiniteValue";
        case ErrorKind::CorruptHeader: return "CorruptHeader";
        case ErrorKind::InvalidManifest: return "InvalidManifest";
        case ErrorKind::InvalidCohort: return "InvalidCohort";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::EmptyBag: return "EmptyBag";
        case ErrorKind::ZeroNorm: return "ZeroNorm";
        case ErrorKind::DegeneratePool: return "DegeneratePool";
        case ErrorKind::MissingLabels: return "MissingLabels";
        case ErrorKind::UnknownScanner: return "UnknownScanner";
        case ErrorKind::SameScanner: return "SameScanner";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::DegenerateVariance: return "DegenerateVariance";
        case ErrorKind::TooFewPatients: return "TooFewPatients";
        case ErrorKind::BadK: return "BadK";
        case ErrorKind::TooFewScanners: return "TooFewScanners";
        case ErrorKind::BadHyperparams: return "BadHyperparams";
        case ErrorKind::NonFiniteActivation: return "NonFiniteActivation";
        case ErrorKind::NonFiniteUpdate: return "NonFiniteUpdate";
        case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorKind::ClassTooSmall: return "ClassTooSmall";
        case ErrorKind::DegenerateSplit: return "DegenerateSplit";
        case ErrorKind::BadCheckpoint: return "BadCheckpoint";
        case ErrorKind::SingleClass: return "SingleClass";
        case ErrorKind::MissingClass: return "MissingClass";
        case ErrorKind::TooManyDegenerateResamples: return "TooManyDegenerateResamples";
        case ErrorKind::IncompleteRatings: return "IncompleteRatings";
        case ErrorKind::TooFewPoints: return "TooFewPoints";
        case ErrorKind::InsufficientPairs: return "InsufficientPairs";
        case ErrorKind::IncompleteGrid: return "IncompleteGrid";
        case ErrorKind::InvalidPredictions: return "InvalidPredictions";
        case ErrorKind::BadSpec: return "BadSpec";
        case ErrorKind::DegenerateHistogram: return "DegenerateHistogram";
        case ErrorKind::TooSmall: return "TooSmall";
        case ErrorKind::BadImage: return "BadImage";
        case ErrorKind::Usage: return "Usage";
    }
    return "Unknown";
}

}  // namespace scanshift
