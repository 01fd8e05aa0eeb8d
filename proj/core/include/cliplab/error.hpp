#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cliplab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A configuration failed validation before any computation ran.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The finite-difference oracle probed a non-finite function value.
class OracleFailure : public Error {
 public:
  OracleFailure(std::size_t coordinate, const std::string& what)
      : Error(what), coordinate_(coordinate) {}
  std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t coordinate_;
};

/// Position of a token inside a batch of groups.
struct TokenLocation {
  std::size_t group = 0;
  std::size_t trajectory = 0;
  std::size_t token = 0;
};

/// exp(logp_new - logp_old) would overflow.
class RatioOverflow : public Error {
 public:
  RatioOverflow(TokenLocation where, const std::string& what)
      : Error(what), where_(where) {}
  const TokenLocation& where() const noexcept { return where_; }

 private:
  TokenLocation where_;
};

/// A parameter update was refused (non-finite gradient or loss).
class UpdateRejected : public Error {
 public:
  using Error::Error;
};

}  // namespace cliplab
