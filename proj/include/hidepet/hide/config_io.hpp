#pragma once

#include <initializer_list>
#include <string>

#include <json.hpp>

#include "hidepet/hide/hide.hpp"

namespace hidepet {

/// ConfigError unless `j` is an object whose keys all appear in `known`.
void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where);

/// Reads j[key] into `out` when present; a type mismatch is a ConfigError.
template <typename T>
void get_if(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for \"") + key + "\": " + e.what());
  }
}

nlohmann::json to_json(const PetSpec& p);
PetSpec pet_spec_from_json(const nlohmann::json& j, PetSpec base = {});

nlohmann::json to_json(const HideConfig& c);
/// Keys absent from `j` keep the value in `base`; unknown keys are a ConfigError.
HideConfig hide_config_from_json(const nlohmann::json& j, HideConfig base = {});

}  // namespace hidepet
