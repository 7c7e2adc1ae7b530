// SPDX-License-Identifier: Apache-2.0
#include "params.hpp"

#include <algorithm>

namespace forge::cli {

nlohmann::json ParamSet::resolve(const nlohmann::json& file, const std::string& section) const {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& e : entries_) out[e.key] = e.def;

  if (!file.is_null()) {
    if (!file.is_object()) throw UsageError("config file must hold an object");
    const bool sectioned = file.contains(section) && file.at(section).is_object();
    const nlohmann::json& layer = sectioned ? file.at(section) : file;
    for (const auto& [key, value] : layer.items()) {
      auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
      if (it == entries_.end()) {
        if (sectioned || !value.is_object()) throw UsageError("unknown config key '" + key + "'");
        continue;  // another command's section
      }
      try {
        it->check_type(value);
      } catch (const nlohmann::json::exception&) {
        throw UsageError("config key '" + key + "' has the wrong type");
      }
      out[key] = value;
    }
  }

  for (const auto& e : entries_)
    if (e.opt->count() > 0) out[e.key] = e.flag_value();
  return out;
}

}  // namespace forge::cli
