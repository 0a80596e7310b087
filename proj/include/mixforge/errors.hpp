#pragma once

#include <stdexcept>
#include <string>

namespace mixforge {

// Exception families map one-to-one onto CLI exit codes (1, 2, 3).
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Programming errors: incompatible tensor shapes, violated preconditions.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace mixforge
