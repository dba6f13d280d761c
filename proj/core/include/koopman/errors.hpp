#pragma once

#include <stdexcept>
#include <string>

namespace koopman {

/// File could not be opened or read/written.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File exists but its contents do not parse or violate the schema.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Inputs are well-formed but incompatible (dictionary id, dimensions).
class CompatError : public std::runtime_error {
public:
    explicit CompatError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace koopman
