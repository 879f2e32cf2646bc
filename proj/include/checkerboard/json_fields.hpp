#pragma once

// Required/optional field lookup for JSON configs; errors name the field.

#include <string>
#include <stdexcept>

#include "json.hpp"

namespace checkerboard {

namespace detail {

template <class T>
T require(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw std::invalid_argument("missing config field '" + where + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("bad config field '" + where + key + "': " + e.what());
  }
}

template <class T>
T optional_field(const nlohmann::json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  return require<T>(j, key, where);
}

}  // namespace detail

}  // namespace checkerboard
