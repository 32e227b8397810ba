#pragma once

#include <stdexcept>
#include <string>

namespace vsdsr {

// Error taxonomy mirrors the CLI exit codes: config 2, ingestion 3, numerical 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IngestionError : std::runtime_error {
    explicit IngestionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/dimension mismatches are treated as configuration errors.
struct ShapeError : ConfigError {
    explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

} // namespace vsdsr
