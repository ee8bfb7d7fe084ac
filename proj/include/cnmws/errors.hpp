#pragma once

#include <stdexcept>
#include <string>

namespace cnmws {

// Malformed or inconsistent input (bad parameters, bad config files).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite state, failed solve, or an estimator that could not be formed.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace cnmws
