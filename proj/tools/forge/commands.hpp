// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "params.hpp"
#include "report.hpp"

namespace forge::cli {

struct Command {
  std::string name;
  std::string help;
  std::function<void(ParamSet&)> declare;
  std::function<void(const nlohmann::json& cfg, Report& report)> run;
};

const std::vector<Command>& commands();

}  // namespace forge::cli
