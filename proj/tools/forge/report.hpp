// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>

#include <nlohmann/json.hpp>

namespace forge::cli {

// Machine-readable run report: config echo and hash, named invariant checks,
// per-phase timings and command-specific fields.
class Report {
 public:
  Report(std::string command, nlohmann::json config);

  nlohmann::json& operator[](const std::string& key) { return body_[key]; }
  const nlohmann::json& config() const { return config_; }

  void check(const std::string& name, bool ok);
  bool ok() const { return failed_ == 0; }

  // Milliseconds since the previous lap (or construction), stored under name.
  void lap(const std::string& name);

  nlohmann::json finish(const std::string& error = {}) const;

 private:
  using Clock = std::chrono::steady_clock;
  std::string command_;
  nlohmann::json config_;
  nlohmann::json body_ = nlohmann::json::object();
  nlohmann::json checks_ = nlohmann::json::object();
  nlohmann::json timings_ = nlohmann::json::object();
  int failed_ = 0;
  Clock::time_point start_ = Clock::now();
  Clock::time_point last_ = start_;
};

std::string config_hash(const nlohmann::json& config);

}  // namespace forge::cli
