#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include "grpfed/errors.hpp"
#include "json.hpp"

namespace grpfed {

// Rejects misspelt or unsupported keys in a configuration object.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                               std::string_view section) {
    if (!j.is_object()) throw ConfigError(std::string(section) + " must be an object");
    for (const auto& item : j.items()) {
        if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
            throw ConfigError(std::string(section) + ": unknown key '" + item.key() + "'");
        }
    }
}

}  // namespace grpfed
