#pragma once

#include <stdexcept>
#include <string>

namespace spm {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class FitError : public Error {
 public:
  using Error::Error;
};

class OutOfCorridorError : public Error {
 public:
  using Error::Error;
};

class AmbiguityError : public Error {
 public:
  using Error::Error;
};

// Pixel ray (nearly) parallel to the ground plane.
class HorizonError : public Error {
 public:
  using Error::Error;
};

// Pixel ray hits the plane behind the camera (above the horizon).
class BehindCameraError : public Error {
 public:
  using Error::Error;
};

// No support point lies within the kernel bandwidth of a query.
class CoverageError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace spm
