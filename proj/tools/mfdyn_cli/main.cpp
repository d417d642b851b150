// Command line front end: runs experiment suites from a JSON config,
// lists built-in scenarios, and audits configs without producing output.
#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "mfdyn/experiment.hpp"
#include "mfdyn/scenarios.hpp"

namespace {

int cmd_run(const std::string& config_path, const std::string& out_dir, const std::string& only) {
  mfdyn::RunConfig cfg = mfdyn::parse_run_config(config_path);
  const mfdyn::RunSummary summary = mfdyn::run_experiments(cfg, out_dir, only);
  for (const auto& [name, ok] : summary.invariants)
    std::printf("%-10s %s\n", name.c_str(), ok ? "ok" : "FAILED");
  for (const std::string& msg : summary.messages) std::printf("note: %s\n", msg.c_str());
  std::printf("outputs: %s (hash %s)\n", summary.out_dir.c_str(), summary.config_hash.c_str());
  std::printf("manifest: %s\n", summary.manifest_file.c_str());
  return summary.exit_code;
}

int cmd_list() {
  for (const mfdyn::Scenario& sc : mfdyn::builtin_scenarios())
    std::printf("%-16s %s\n", sc.name.c_str(), sc.description.c_str());
  return 0;
}

int cmd_validate(const std::string& config_path) {
  mfdyn::RunConfig cfg = mfdyn::parse_run_config(config_path);
  const auto [code, lines] = mfdyn::validate_config(cfg);
  for (const std::string& line : lines) std::printf("%s\n", line.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mean-field reflected-system numerical laboratory"};
  app.set_version_flag("--version", std::string(mfdyn::tool_version()));
  app.require_subcommand(1);

  std::string config_path, out_dir, only;

  CLI::App* run = app.add_subcommand("run", "run the experiments selected by a JSON config");
  run->add_option("config", config_path, "path to the run config")->required();
  run->add_option("--out", out_dir, "output directory (overrides the config)");
  run->add_option("--only", only, "run a single experiment from the suite");

  app.add_subcommand("list-scenarios", "list built-in scenarios");

  CLI::App* validate = app.add_subcommand("validate", "audit a config and its assumptions");
  validate->add_option("config", config_path, "path to the run config")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, only);
    if (app.get_subcommand("list-scenarios")->parsed()) return cmd_list();
    if (validate->parsed()) return cmd_validate(config_path);
  } catch (const mfdyn::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const mfdyn::NoConvergence& e) {
    std::fprintf(stderr, "no convergence: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
