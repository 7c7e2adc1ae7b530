// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace forge::cli {

// Bad flags, unknown or mistyped config keys, missing inputs: exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Command parameters with three layers: built-in defaults, then the command's
// section of a --config file, then explicit flags.
class ParamSet {
 public:
  explicit ParamSet(CLI::App* app) : app_(app) {}

  template <typename T>
  void add(const std::string& key, T def, const std::string& help) {
    auto value = std::make_shared<T>(def);
    std::string flag = "--" + key;
    for (auto& ch : flag)
      if (ch == '_') ch = '-';
    if (key.size() == 1) flag = "-" + key + "," + flag;
    CLI::Option* opt = app_->add_option(flag, *value, help)->capture_default_str();
    entries_.push_back({key, opt, nlohmann::json(def), [value] { return nlohmann::json(*value); },
                        [](const nlohmann::json& j) { (void)j.get<T>(); }});
  }

  // Resolves all layers into one flat object. `file` is the whole config
  // document; keys come from its `section` object, falling back to top level.
  nlohmann::json resolve(const nlohmann::json& file, const std::string& section) const;

 private:
  struct Entry {
    std::string key;
    CLI::Option* opt;
    nlohmann::json def;
    std::function<nlohmann::json()> flag_value;
    std::function<void(const nlohmann::json&)> check_type;
  };

  CLI::App* app_;
  std::vector<Entry> entries_;
};

}  // namespace forge::cli
