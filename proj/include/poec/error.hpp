#pragma once

#include <stdexcept>
#include <string>

namespace poec {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mismatched tensor/layer dimensions.
struct ShapeError : Error {
    using Error::Error;
};

// Input outside an operation's mathematical domain (e.g. unsquash of a
// vector with norm >= 1).
struct DomainError : Error {
    using Error::Error;
};

// A firing capsule with a zero pre-activation makes the energy -log(0).
struct SingularEnergyError : Error {
    using Error::Error;
};

// File input/output and on-disk format problems.
struct IoError : Error {
    using Error::Error;
};

// Non-finite losses or gradients during training.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace poec
