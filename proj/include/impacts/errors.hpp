#ifndef IMPACTS_ERRORS_HPP
#define IMPACTS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace impacts {

// Error taxonomy shared across the toolkit. The CLI maps each class to a
// stable exit code (see cli.hpp): parse/validation -> 1, configuration -> 2,
// endpoint/transport -> 3, numeric -> 4.

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& msg, int http_status = 0)
      : std::runtime_error(msg), status_(http_status) {}
  int http_status() const { return status_; }

 private:
  int status_;
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace impacts

#endif  // IMPACTS_ERRORS_HPP
