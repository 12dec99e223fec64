#pragma once

#include <stdexcept>
#include <string>

namespace shortfall {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs do not fit together (wrong table shape, path not in the tree, ...).
class StructureError : public Error {
 public:
  using Error::Error;
};

/// A value is outside its mathematical domain (negative wealth argument,
/// probabilities not summing to one, p < 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A strategy would drive portfolio value below zero.
class AdmissibilityError : public Error {
 public:
  using Error::Error;
};

/// A combinatorial or memory guard refused the request.
class GuardError : public Error {
 public:
  using Error::Error;
};

}  // namespace shortfall
