// CLI front end: subcommand dispatch, config loading, flag overrides.
// Heavy lifting lives in the headers; this file only maps argv onto a
// RunConfig and exceptions onto exit codes.

#include <regime_coupler/cli.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"regime_coupler: switching-diffusion simulation and coupling diagnostics"};
  app.require_subcommand(1);

  std::string config_path, out_dir, model;
  std::uint64_t seed = 0;
  int workers = 0;
  bool seed_given = false, workers_given = false, out_given = false, model_given = false;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration file (sectioned text or JSON)");
    sub->add_option("--seed", seed, "master seed (overrides config and environment)")
        ->each([&](const std::string&) { seed_given = true; });
    sub->add_option("--workers", workers, "worker thread count")
        ->each([&](const std::string&) { workers_given = true; });
    sub->add_option("--out", out_dir, "output directory")
        ->each([&](const std::string&) { out_given = true; });
    sub->add_option("--model", model, "model name or parameter file")
        ->each([&](const std::string&) { model_given = true; });
  };

  for (const char* name : {"simulate", "couple", "bounds", "meanfield", "validate"})
    add_common(app.add_subcommand(name));

  CLI11_PARSE(app, argc, argv);
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    rcoup::RunConfig cfg;
    if (!config_path.empty()) cfg = rcoup::load_run_config(config_path);
    if (model_given) cfg.model = model;
    if (out_given) cfg.out_dir = out_dir;
    if (workers_given) cfg.workers = workers;
    if (seed_given) {
      cfg.seed = seed;
      cfg.seed_set = true;
    } else if (!cfg.seed_set) {
      if (const char* env = std::getenv("REGIME_COUPLER_SEED")) {
        cfg.seed = rcoup::detail::cfg_u64("REGIME_COUPLER_SEED", env);
        cfg.seed_set = true;
      }
    }
    return rcoup::dispatch_command(command, cfg, std::cout, std::cerr);
  } catch (const rcoup::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const rcoup::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
