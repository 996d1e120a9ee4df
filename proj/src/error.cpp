#include "divts/error.hpp"

namespace divts {

const char* err_name(Err e) {
    switch (e) {
        case Err::LengthTooShort: return "LengthTooShort";
        case Err::LabelSpanConflict: return "LabelSpanConflict";
        case Err::NonFiniteInput: return "NonFiniteInput";
        case Err::EmptySplit: return "EmptySplit";
        case Err::TooFewIDClasses: return "TooFewIDClasses";
        case Err::FormatError: return "FormatError";
        case Err::DimensionMismatch: return "DimensionMismatch";
        case Err::InvalidConfig: return "InvalidConfig";
        case Err::MissingPlantedLabels: return "MissingPlantedLabels";
        case Err::ShapeMismatch: return "ShapeMismatch";
        case Err::LabelOutOfRange: return "LabelOutOfRange";
        case Err::NonFiniteGradient: return "NonFiniteGradient";
        case Err::DegenerateWeights: return "DegenerateWeights";
        case Err::EmptyCluster: return "EmptyCluster";
        case Err::NonFiniteLoss: return "NonFiniteLoss";
        case Err::SingularCovariance: return "SingularCovariance";
        case Err::MissingClass: return "MissingClass";
        case Err::MissingStats: return "MissingStats";
        case Err::LengthMismatch: return "LengthMismatch";
        case Err::OneClassOnly: return "OneClassOnly";
        case Err::NoPositives: return "NoPositives";
        case Err::TooFewSamples: return "TooFewSamples";
        case Err::SchemaMismatch: return "SchemaMismatch";
        case Err::MissingCheckpoint: return "MissingCheckpoint";
        case Err::IOFailure: return "IOFailure";
    }
    return "UnknownError";
}

}  // namespace divts
