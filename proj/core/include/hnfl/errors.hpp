#pragma once

#include <stdexcept>
#include <string>

namespace hnfl {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/layer geometry does not compose.
class shape_error : public error {
public:
  explicit shape_error(const std::string& msg) : error(msg) {}
};

/// NaN or Inf escaped a numeric kernel.
class numeric_error : public error {
public:
  explicit numeric_error(const std::string& msg) : error(msg) {}
};

/// Malformed or truncated input file.
class io_error : public error {
public:
  explicit io_error(const std::string& msg) : error(msg) {}
};

/// Run configuration violates the schema.
class config_error : public error {
public:
  explicit config_error(const std::string& msg) : error(msg) {}
};

}  // namespace hnfl
