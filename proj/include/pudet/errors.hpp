#pragma once

#include <stdexcept>
#include <string>

namespace pudet {

// invalid arguments or malformed batches/shapes
class InvalidInputError : public std::invalid_argument {
public:
    explicit InvalidInputError(const std::string& what) : std::invalid_argument(what) {}
};

// unusable configuration (bad keys, impossible placements, empty grids)
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// non-finite loss or gradients during training; carries a diagnostic
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

// metric requested on a population where it has no definition (e.g. zero ground truth)
class UndefinedMetricError : public std::runtime_error {
public:
    explicit UndefinedMetricError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pudet
