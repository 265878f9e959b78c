#ifndef BFAL_ERRORS_HPP
#define BFAL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace bfal {

// Cholesky ran out of nugget levels, a covariance is numerically indefinite, etc.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// All optimization restarts diverged.
class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// A file is syntactically broken (bad JSON, bad label domain, wrong version).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// A file parsed fine but its content violates a cross-file contract
// (missing query ids, duplicate merges, round collisions).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Run-time configuration problem (as opposed to a programming error).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bfal

#endif  // BFAL_ERRORS_HPP
