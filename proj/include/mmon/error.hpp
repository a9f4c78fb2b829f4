#pragma once

#include <stdexcept>
#include <string>

namespace mmon {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Errors caused by bad user input (files, arguments, datasets). The CLI maps
/// these to exit code 1; every other Error maps to 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

#define MMON_DEFINE_ERROR(Name, Base)   \
    class Name : public Base {          \
    public:                             \
        using Base::Base;               \
    }

// puzzle_core
MMON_DEFINE_ERROR(DomainExhausted, Error);
MMON_DEFINE_ERROR(GenerationRetryExceeded, Error);
MMON_DEFINE_ERROR(FormatError, ValidationError);
MMON_DEFINE_ERROR(IoError, ValidationError);
MMON_DEFINE_ERROR(InvalidArgument, ValidationError);

// renderer
MMON_DEFINE_ERROR(UnsupportedSize, ValidationError);

// oracle
MMON_DEFINE_ERROR(AmbiguousTie, Error);

// tensor_autograd
MMON_DEFINE_ERROR(ShapeMismatch, Error);
MMON_DEFINE_ERROR(BadAxis, Error);
MMON_DEFINE_ERROR(BadIndex, Error);
MMON_DEFINE_ERROR(NotScalar, Error);
MMON_DEFINE_ERROR(MissingGrad, Error);

// mmon_model
MMON_DEFINE_ERROR(MissingMeta, Error);

// harness
MMON_DEFINE_ERROR(TooFew, ValidationError);
MMON_DEFINE_ERROR(EmptyAfterFilter, ValidationError);

#undef MMON_DEFINE_ERROR

}  // namespace mmon
