#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xil {

// Malformed value (arity mismatch, bad shape).
struct StructuralError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Caller violated an operation precondition.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ConfigurationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dialogue move that is illegal in the current protocol phase.
struct ConformanceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inference request too large for the exact enumerator.
struct RefusalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace xil
