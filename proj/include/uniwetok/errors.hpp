#pragma once

#include <stdexcept>
#include <string>

namespace uniwetok {

// Every error raised by the library derives from Error. The CLI maps the
// kind to an exit code (config/validation/data/format -> 2, training -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& term, long step, const std::string& what)
      : Error(what), term_(term), step_(step) {}
  const std::string& term() const { return term_; }
  long step() const { return step_; }

 private:
  std::string term_;
  long step_;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace uniwetok
