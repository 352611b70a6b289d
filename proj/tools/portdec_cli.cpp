// portdec: simulate | myopic | hedge | decompose | verify --config <path> [overrides]

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "portdec/commands.hpp"
#include "portdec/errors.hpp"

int main(int argc, char** argv) {
  using namespace portdec;
  CLI::App app{"Myopic and hedging portfolio decomposition by Monte Carlo"};
  app.set_version_flag("--version", std::string(tool_version));
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps, paths;

  for (const char* name : {"simulate", "myopic", "hedge", "decompose", "verify"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides outputs.directory)");
    sub->add_option("--seed", seed, "master seed (overrides mc.seed)");
    sub->add_option("--steps", steps, "time steps (overrides grid.n_steps)");
    sub->add_option("--paths", paths, "Monte Carlo paths (overrides mc.n_paths)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code::config_error;
  }

  RunConfig config;
  Command command;
  try {
    command = parse_command(app.get_subcommands().front()->get_name());
    config = load_config(config_path);
    if (out_dir) config.out_dir = *out_dir;
    if (seed) config.seed = *seed;
    if (steps) config.n_steps = *steps;
    if (paths) config.n_paths = *paths;
    validate_config(config);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return exit_code::config_error;
  }
  return execute(command, config, std::cerr, std::cerr);
}
