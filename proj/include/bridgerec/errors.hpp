#pragma once

#include <stdexcept>
#include <string>

namespace bridgerec {

// Base for every error the library throws. Callers that only care about
// "something in bridgerec failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain (e.g. t outside [0, 1]).
class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace bridgerec
