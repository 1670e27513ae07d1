#pragma once

#include <stdexcept>
#include <string>

namespace gcpmd {

/// Index outside a shape, mode, or fiber range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A datum or model parameter outside the domain of a loss or generator.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Unsupported or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Caller broke a precondition of an operation (wrong mode, empty batch, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Estimator or solver state that cannot serve the request.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed input files or data that violate the data contract.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Objective blew up or became non-finite during a run.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gcpmd
