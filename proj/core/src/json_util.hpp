#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include <json.hpp>

#include "attnsched/errors.hpp"

namespace attnsched::detail {

inline std::size_t line_of_offset(std::string_view text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

inline nlohmann::json parse_json(std::string_view text) {
  try {
    return nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    // nlohmann reports the byte *after* the offending character.
    std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    throw ConfigError("syntax error: " + std::string(e.what()),
                      line_of_offset(text, offset), "");
  }
}

/// Best-effort line lookup for a key inside the original text.
inline std::size_t line_of_key(std::string_view text, std::string_view key) {
  std::string needle = "\"" + std::string(key) + "\"";
  auto pos = text.find(needle);
  return pos == std::string_view::npos ? 0 : line_of_offset(text, pos);
}

template <typename T>
T require(const nlohmann::json& obj, std::string_view key,
          const std::string& path, std::string_view text) {
  std::string field = path + "/" + std::string(key);
  if (!obj.is_object() || !obj.contains(key)) {
    throw ConfigError("missing required field", line_of_key(text, key), field);
  }
  try {
    return obj.at(std::string(key)).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("wrong type: ") + e.what(),
                      line_of_key(text, key), field);
  }
}

template <typename T>
T optional(const nlohmann::json& obj, std::string_view key, T fallback,
           const std::string& path, std::string_view text) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  return require<T>(obj, key, path, text);
}

}  // namespace attnsched::detail
