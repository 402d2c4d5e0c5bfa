#ifndef PLANCRAFT_ERRORS_HPP_
#define PLANCRAFT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace plancraft {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document; `field` is a JSON-path-like location.
class SchemaError : public Error {
 public:
  SchemaError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Well-formed input that violates a domain invariant.
class InvariantError : public Error {
 public:
  InvariantError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Non-finite activations or losses. `layer` is -1 when not layer-specific.
class NumericalFault : public Error {
 public:
  NumericalFault(int layer, const std::string& what)
      : Error(what + (layer >= 0 ? " (layer " + std::to_string(layer) + ")" : "")), layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

/// Dataset shard or manifest failed verification.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace plancraft

#endif  // PLANCRAFT_ERRORS_HPP_
