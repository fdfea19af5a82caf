#pragma once

#include <stdexcept>
#include <string>

namespace btr {

// Every failure surfaced by the library derives from Error so callers can
// catch one type at the process boundary.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class RoleError : public Error { using Error::Error; };
class ArgumentError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class DataError : public Error { using Error::Error; };
class CheckpointError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace btr
