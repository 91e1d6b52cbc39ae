#pragma once

#include <stdexcept>
#include <string>

namespace mhunet {

// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A caller violated an operation's precondition (non-scalar backward seed, empty aggregate, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by decoders; `field()` names the header field or payload region that failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string field, const std::string& what)
      : std::runtime_error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Non-finite loss or gradient during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mhunet
