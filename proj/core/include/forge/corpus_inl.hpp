// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "forge/error.hpp"

namespace forge {

template <typename T, typename Parse>
std::vector<T> read_jsonl(std::istream& in, const std::string& source, Parse parse) {
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DomainError(source + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DomainError& e) {
      throw DomainError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace forge
