#pragma once

#include <stdexcept>
#include <string>

namespace tsc {

// Malformed data: non-finite coordinates, mismatched lengths, broken invariants.
class InvalidInput : public std::invalid_argument {
public:
    explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Out-of-range configuration value (temperatures, stabilizers, counts).
class InvalidParameter : public std::invalid_argument {
public:
    explicit InvalidParameter(const std::string& what) : std::invalid_argument(what) {}
};

// File content that cannot be parsed; what() carries the line diagnostic.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tsc
