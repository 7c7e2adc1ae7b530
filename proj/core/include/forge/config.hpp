// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string_view>

#include <nlohmann/json.hpp>

namespace forge {

// Reads the TOML subset used by forge configs into JSON: comments, bare or
// quoted keys, `key = value` with strings, integers, floats, booleans and flat
// arrays, [table] and [[array.of.tables]] headers (dotted names nest).
nlohmann::json parse_toml(std::string_view text);

// JSON or TOML by extension (.toml); anything else is parsed as JSON.
nlohmann::json load_config_file(const std::filesystem::path& path);

}  // namespace forge
