#pragma once

#include <stdexcept>
#include <string>

namespace malafide {

/// Precondition or input-format violation (bad length, mismatched rates, malformed file).
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Numerical breakdown at run time (non-finite objective or gradient).
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition)
        throw ValidationError(message);
}

} // namespace detail
} // namespace malafide
