#pragma once

#include <stdexcept>
#include <string>

namespace bkd {

// Violated precondition of a public operation (bad shape, index, argument).
class ContractError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Shape mismatch between operands. Message names both shapes.
class DimensionError : public ContractError {
   public:
    using ContractError::ContractError;
};

// NaN propagation, singular systems and similar numerical failures.
class NumericalError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Training diverged; the model holds the last finite weights.
class TrainingError : public NumericalError {
   public:
    using NumericalError::NumericalError;
};

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Stored artifact does not match its recorded format or hash.
class CorruptionError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ContractError(what);
}

}  // namespace bkd
