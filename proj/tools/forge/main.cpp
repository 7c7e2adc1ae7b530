// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "commands.hpp"
#include "forge/config.hpp"
#include "forge/error.hpp"

namespace {

struct Bound {
  const forge::cli::Command* command;
  CLI::App* app;
  std::unique_ptr<forge::cli::ParamSet> params;
  std::string config_path;
  std::string report_path;
};

void emit(const nlohmann::json& report, const std::string& path) {
  std::cout << report.dump(2) << "\n";
  if (path.empty()) return;
  std::ofstream out(path);
  out << report.dump(2) << "\n";
  if (!out) std::cerr << "forge: cannot write report to " << path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  using namespace forge::cli;
  CLI::App app{"forge: any-resolution multimodal data and training toolkit"};
  app.require_subcommand(1);

  std::vector<Bound> bound;
  bound.reserve(commands().size());
  for (const auto& cmd : commands()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    auto& b = bound.emplace_back(Bound{&cmd, sub, std::make_unique<ParamSet>(sub), {}, {}});
    sub->add_option("--config", b.config_path, "JSON or TOML config; flags override it");
    sub->add_option("--report", b.report_path, "also write the JSON report to this file");
    b.params->add<std::uint64_t>("seed", 0, "root seed");
    b.params->add<std::string>("out", "", "output file or directory");
    cmd.declare(*b.params);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  for (auto& b : bound) {
    if (!b.app->parsed()) continue;
    nlohmann::json cfg;
    try {
      nlohmann::json file;
      if (!b.config_path.empty()) {
        if (!std::filesystem::is_regular_file(b.config_path)) throw UsageError("config file not found: " + b.config_path);
        file = forge::load_config_file(b.config_path);
      }
      cfg = b.params->resolve(file, b.command->name);
    } catch (const UsageError& e) {
      std::cerr << "forge " << b.command->name << ": " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "forge " << b.command->name << ": malformed config: " << e.what() << "\n";
      return 2;
    }

    Report report(b.command->name, cfg);
    try {
      b.command->run(cfg, report);
    } catch (const UsageError& e) {
      std::cerr << "forge " << b.command->name << ": " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      emit(report.finish(e.what()), b.report_path);
      std::cerr << "forge " << b.command->name << ": " << e.what() << "\n";
      return 1;
    }
    emit(report.finish(), b.report_path);
    return report.ok() ? 0 : 1;
  }
  return 2;
}
