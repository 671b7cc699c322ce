#pragma once

#include <stdexcept>
#include <string>

namespace slideseg {

// Caller passed data that violates an operation's precondition.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Unknown modality, inconsistent model config, incompatible weights.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bytes on disk or over the wire that do not decode.
class CorruptData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss or similar numerical fault during optimization.
class TrainingFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace slideseg
