#pragma once

#include <stdexcept>
#include <string>

namespace grpfed {

// Invalid configuration or shape mismatch between collaborating objects.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A loss, gradient or parameter became non-finite.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// API misuse, e.g. backward() without a matching forward cache.
class UsageError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

}  // namespace grpfed
