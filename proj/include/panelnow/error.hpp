#pragma once

#include <stdexcept>
#include <string>

namespace panelnow {

/// Input that fails a documented precondition or invariant (bad file, bad config value).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Matrix or vector shapes that do not line up.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A prediction would have used an observation dated after its information set.
class LookAheadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical procedure is undefined for the supplied data (zero design, zero-variance loss differential).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace panelnow
