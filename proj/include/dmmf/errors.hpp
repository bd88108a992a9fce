#pragma once

#include <stdexcept>
#include <string>

namespace dmmf {

/// Invalid configuration: bad shares, length mismatches, malformed JSON fields.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside an operation's mathematical domain (e.g. conditional mean at p = 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mechanism or strategy state that cannot occur in a valid run.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Exhaustive enumeration would exceed the configured size cap.
class SizeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// An internal invariant failed; the message carries the offending input.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace dmmf
