#pragma once

#include <stdexcept>
#include <string>

namespace dropkit {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct SizeError : std::runtime_error {
  explicit SizeError(const std::string& msg) : std::runtime_error("size error: " + msg) {}
};

struct ParameterError : std::invalid_argument {
  explicit ParameterError(const std::string& msg) : std::invalid_argument("parameter error: " + msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};

struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

}  // namespace dropkit
