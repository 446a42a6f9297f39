#pragma once

#include <stdexcept>
#include <string>

namespace hiwave {

// Error taxonomy. Each class maps to a process exit code in the CLI:
//   ConfigError/UsageError -> 1, DataError -> 2, NumericError -> 3.

// Bad configuration value, unknown variant/key, incompatible settings.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (backward on a consumed graph, stats from the wrong split, ...).
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dimension mismatch between tensors.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset ingestion problems: missing files, truncated rows, count mismatches.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Domain violations (log of a non-positive value) and non-finite results.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace hiwave
