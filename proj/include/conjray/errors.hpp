#pragma once

#include <stdexcept>
#include <string>

namespace conjray {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: configuration, preconditions on arguments, file contents.
class InputError : public Error {
public:
    using Error::Error;
};

/// A numerical guard tripped. The CLI maps these to exit code 3.
class NumericalGuardError : public Error {
public:
    NumericalGuardError(std::string guard, const std::string& what)
        : Error(guard + ": " + what), guard_(std::move(guard)) {}
    const std::string& guard() const noexcept { return guard_; }

private:
    std::string guard_;
};

#define CONJRAY_GUARD_ERROR(Name)                                              \
    class Name : public NumericalGuardError {                                  \
    public:                                                                    \
        explicit Name(const std::string& what) : NumericalGuardError(#Name, what) {} \
    }

CONJRAY_GUARD_ERROR(NoExit);
CONJRAY_GUARD_ERROR(Diverged);
CONJRAY_GUARD_ERROR(QNotContractive);
CONJRAY_GUARD_ERROR(DegenerateZero);
CONJRAY_GUARD_ERROR(NoConjugateOverlap);
CONJRAY_GUARD_ERROR(CoverageTooSparse);
CONJRAY_GUARD_ERROR(NotSimple);

#undef CONJRAY_GUARD_ERROR

class InvalidAlpha : public InputError {
public:
    using InputError::InputError;
};
class NotOnBoundary : public InputError {
public:
    using InputError::InputError;
};
class BlobOutsideDomain : public InputError {
public:
    using InputError::InputError;
};
class GridTooCoarse : public InputError {
public:
    using InputError::InputError;
};
/// Malformed or unknown configuration entry. The CLI maps these to exit code 2.
class ConfigError : public InputError {
public:
    using InputError::InputError;
};
class IOError : public Error {
public:
    using Error::Error;
};

}  // namespace conjray
