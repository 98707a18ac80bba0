#pragma once

#include <stdexcept>
#include <string>

namespace metaptq {

// Error categories map 1:1 onto CLI exit codes (see tools/metaptq.cpp).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised on NaN/Inf values entering the graph, shape mismatches, or
// invalid numeric arguments (e.g. non-positive quantization scale).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace metaptq
