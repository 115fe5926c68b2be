#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "pgnnl/errors.hpp"

namespace pgnnl {

/// Strict parsing: rejects any key of `j` not listed in `allowed`.
inline void require_keys_subset(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                                std::string_view context) {
  if (!j.is_object()) throw ConfigError(std::string(context) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(context) + ": unknown key '" + key + "'");
  }
}

/// Reads `j[key]` into `out` when present; wraps type errors as ConfigError.
template <typename T>
void read_optional(const nlohmann::json& j, std::string_view key, T& out, std::string_view context) {
  auto it = j.find(std::string(key));
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string(context) + "." + std::string(key) + ": " + e.what());
  }
}

template <typename T>
T read_required(const nlohmann::json& j, std::string_view key, std::string_view context) {
  if (!j.contains(std::string(key)))
    throw ConfigError(std::string(context) + ": missing key '" + std::string(key) + "'");
  T out{};
  read_optional(j, key, out, context);
  return out;
}

}  // namespace pgnnl
