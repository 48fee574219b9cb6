#pragma once

#include <stdexcept>
#include <string>

namespace dsvm {

// Raised when an operation's input violates its shape or value contract.
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised for invalid configuration values (bad sizes, unknown keys, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised for missing or malformed files on disk.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when a training loss becomes NaN or infinite.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

inline void require_config(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace dsvm
