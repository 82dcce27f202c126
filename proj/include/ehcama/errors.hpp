#pragma once

#include <stdexcept>

namespace ehcama {

/// Tensor shapes that cannot be combined.
class DimensionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (a programming error).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid user-supplied configuration, checkpoint or file content.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ehcama
