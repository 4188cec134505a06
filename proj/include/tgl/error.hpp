#pragma once

#include <stdexcept>
#include <string>

namespace tgl {

// Invalid configuration or malformed input files. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric/determinism check failure. CLI maps this to exit code 3.
struct CheckError : std::runtime_error {
    explicit CheckError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tgl
