#pragma once

#include <stdexcept>
#include <string>

namespace embb {

// Configuration value outside its declared range. field() names the offender.
class InvalidConfig : public std::invalid_argument {
public:
    InvalidConfig(std::string field, const std::string &why)
        : std::invalid_argument("invalid config: " + field + ": " + why), field_(std::move(field)) {}

    const std::string &field() const noexcept { return field_; }

private:
    std::string field_;
};

// A caller broke an operation's precondition (step after done, shape mismatch, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class InsufficientData : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace embb
