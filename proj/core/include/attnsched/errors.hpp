#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace attnsched {

/// Malformed or semantically invalid configuration text. `line` is 1-based,
/// 0 when the problem is not tied to a single line; `field` is a JSON-pointer
/// style path ("/cores/0/array_rows") or empty.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, std::size_t line, std::string field)
      : std::runtime_error(format(message, line, field)),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& message, std::size_t line,
                            const std::string& field) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!field.empty()) out += field + ": ";
    return out + message;
  }

  std::size_t line_;
  std::string field_;
};

}  // namespace attnsched
