#pragma once

#include <stdexcept>
#include <string>

namespace npgrid {

/// A caller violated a documented precondition (shape, range, arity).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN/Inf or a factorization broke down.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data: CSV rows, checkpoint containers, config files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace npgrid
