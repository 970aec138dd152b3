#pragma once

#include <stdexcept>
#include <string>

namespace rdlab {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Microdata cannot be turned into a DGP (one-sided support, too few rows, zero RMSE).
class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Least-squares design is rank deficient.
class FitError : public Error {
 public:
  FitError(const std::string& what, double condition_number)
      : Error(what), condition_number_(condition_number) {}
  double condition_number() const noexcept { return condition_number_; }

 private:
  double condition_number_;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class BandwidthError : public Error {
 public:
  using Error::Error;
};

/// Too few observations inside a bandwidth window.
class InsufficientData : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace rdlab
