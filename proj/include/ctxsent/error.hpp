#pragma once

#include <stdexcept>
#include <string>

namespace ctxsent {

// Bad input: malformed files, schema violations, invalid configs.
// The CLI maps this to exit code 2; everything else to 3.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Failures at run time: I/O, remote endpoints, numeric contract violations.
class RuntimeFailure : public std::runtime_error {
public:
    explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace ctxsent
