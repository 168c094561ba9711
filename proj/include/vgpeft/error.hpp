#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vgp {

// Base class for everything the toolkit throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or axis mismatch in a tensor operation.
struct DimensionError : Error { using Error::Error; };
// Invalid model or training configuration; message names the field.
struct ConfigError : Error { using Error::Error; };
// Invalid PEFT specification.
struct SpecError : Error { using Error::Error; };
// Malformed runtime input (tokens, patches, records).
struct InputError : Error { using Error::Error; };
// Operation not valid in the model's current state.
struct StateError : Error { using Error::Error; };
// API contract violation, e.g. backward on a non-scalar.
struct ContractError : Error { using Error::Error; };
// Unreadable or syntactically invalid file content.
struct ParseError : Error { using Error::Error; };
// Well-formed input that violates a record invariant.
struct ValidationError : Error { using Error::Error; };
// Predictions and annotations do not line up.
struct JoinError : Error { using Error::Error; };
// Delta checkpoint applied against the wrong base weights.
struct ChecksumError : Error { using Error::Error; };
// Synthetic dataset constraints cannot be satisfied.
struct GenerationError : Error { using Error::Error; };

// Training aborted on a non-finite loss.
class DivergedError : public Error {
 public:
  DivergedError(std::size_t step, const std::string& what)
      : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace vgp
