// sbm: command-line front end (run, check, sweep, oracles).

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sbm/sbm.hpp"

namespace {

int dispatch(const std::string& command, const std::string& path, std::optional<std::size_t> workers,
             const std::string& out_override) {
  sbm::RunConfig cfg;
  try {
    cfg = sbm::load_run_config(path);
  } catch (const sbm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return sbm::exit_code::config_error;
  }
  std::string out = out_override.empty() ? sbm::resolve_output_dir(cfg) : out_override;
  try {
    if (command == "run") return sbm::execute_run(cfg, out, false, std::cerr);
    if (command == "check") return sbm::execute_run(cfg, out, true, std::cerr);
    if (command == "sweep") return sbm::execute_sweep(cfg, out, workers, std::cerr);
    return sbm::execute_oracles(cfg, out, std::cerr);
  } catch (const sbm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return sbm::exit_code::config_error;
  } catch (const std::exception& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return sbm::exit_code::numerical_abort;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lagrangian simulator for the 1D singular Boussinesq models"};
  app.require_subcommand(1);

  std::string path, out;
  std::size_t workers = 0;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {{"run", "simulate one configuration"},
                      {"check", "simulate and fail (exit 4) when a check fails"},
                      {"sweep", "run the [sweep] grid over beta1 x beta2"},
                      {"oracles", "export the comparison-problem curves"}};
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("config", path, "configuration file")->required();
    sc->add_option("-o,--output-dir", out, "output directory (overrides OUTPUT_DIR and [output] dir)");
    if (std::string(s.name) == "sweep") sc->add_option("-j,--workers", workers, "worker threads");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : sbm::exit_code::config_error;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return dispatch(command, path, workers > 0 ? std::optional<std::size_t>(workers) : std::nullopt, out);
}
