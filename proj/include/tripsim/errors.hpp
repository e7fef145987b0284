#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tripsim {

/// Mathematical precondition failure (zero-norm vector, non-positive temperature).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid configuration value; the message carries the field path.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shape or finiteness mismatch between operands.
class StructuralError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Token set with too few distinct points to form the requested clusters.
class DegenerateInputError : public std::runtime_error {
 public:
  DegenerateInputError(std::size_t distinct, std::size_t requested)
      : std::runtime_error("degenerate token set: " + std::to_string(distinct) +
                           " distinct tokens for " + std::to_string(requested) + " clusters"),
        distinct_(distinct) {}

  std::size_t distinct_count() const noexcept { return distinct_; }

 private:
  std::size_t distinct_;
};

/// Internal invariant broken; indicates a bug rather than bad input.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace tripsim
