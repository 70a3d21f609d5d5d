#pragma once

#include <stdexcept>
#include <string>

namespace ctx {

/// Shape or dimension disagreement between operands.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated precondition or misuse of an API contract.
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Synthetic scene construction could not satisfy its constraints.
class GenerationError : public std::runtime_error {
public:
    explicit GenerationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Loss became NaN/Inf during training.
class TrainingDivergedError : public std::runtime_error {
public:
    explicit TrainingDivergedError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File or stream level failure.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ctx
