#pragma once

#include <stdexcept>
#include <string>

namespace divts {

// Every failure the library can report, so callers and tests can match on
// the kind instead of parsing message text.
enum class Err {
    // data
    LengthTooShort,
    LabelSpanConflict,
    NonFiniteInput,
    EmptySplit,
    TooFewIDClasses,
    FormatError,
    DimensionMismatch,
    // synthgen
    InvalidConfig,
    MissingPlantedLabels,
    // nn
    ShapeMismatch,
    LabelOutOfRange,
    NonFiniteGradient,
    // training
    DegenerateWeights,
    EmptyCluster,
    NonFiniteLoss,
    // detect
    SingularCovariance,
    MissingClass,
    MissingStats,
    // eval
    LengthMismatch,
    OneClassOnly,
    NoPositives,
    TooFewSamples,
    // cli / io
    SchemaMismatch,
    MissingCheckpoint,
    IOFailure,
};

const char* err_name(Err e);

class Error : public std::runtime_error {
public:
    Error(Err kind, const std::string& what)
        : std::runtime_error(std::string(err_name(kind)) + ": " + what), kind_(kind) {}

    Err kind() const { return kind_; }

private:
    Err kind_;
};

[[noreturn]] inline void fail(Err kind, const std::string& what) { throw Error(kind, what); }

}  // namespace divts
