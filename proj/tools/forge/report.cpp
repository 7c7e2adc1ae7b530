// SPDX-License-Identifier: Apache-2.0
#include "report.hpp"

#include <cstdio>

#include "forge/linalg.hpp"

namespace forge::cli {

std::string config_hash(const nlohmann::json& config) {
  const std::string text = config.dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(hash_bytes(text.data(), text.size(), kFnvOffset)));
  return buf;
}

Report::Report(std::string command, nlohmann::json config) : command_(std::move(command)), config_(std::move(config)) {}

void Report::check(const std::string& name, bool ok) {
  // A check that already failed stays failed.
  if (checks_.contains(name) && !checks_[name].get<bool>()) return;
  if (!ok) ++failed_;
  checks_[name] = ok;
}

void Report::lap(const std::string& name) {
  const auto now = Clock::now();
  timings_[name] = std::chrono::duration<double, std::milli>(now - last_).count();
  last_ = now;
}

nlohmann::json Report::finish(const std::string& error) const {
  nlohmann::json out = {{"command", command_},
                        {"config", config_},
                        {"config_hash", config_hash(config_)},
                        {"checks", checks_},
                        {"timings_ms", timings_}};
  out["timings_ms"]["total"] = std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
  for (const auto& [k, v] : body_.items()) out[k] = v;
  if (!error.empty())
    out["status"] = "error";
  else
    out["status"] = ok() ? "ok" : "invariant_violation";
  if (!error.empty()) out["error"] = error;
  return out;
}

}  // namespace forge::cli
