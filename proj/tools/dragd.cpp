// dragd: run experiments, check the gradient engine, print run reports.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "dragd/error.hpp"
#include "dragd/experiment.hpp"
#include "dragd/gradcheck.hpp"
#include "dragd/metrics.hpp"

namespace {

// Only the output directory may come from the environment.
constexpr const char* kOutEnv = "DRAGD_OUT_DIR";

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool dry_run = false;
  std::vector<std::string> modes;
};

int cmd_run(const RunOptions& o) {
  dragd::ExperimentConfig config = dragd::load_experiment_config(o.config);
  if (o.seed) config.seed = *o.seed;
  if (!o.out.empty()) {
    config.output_dir = o.out;
  } else if (const char* env = std::getenv(kOutEnv); env != nullptr && *env != '\0') {
    config.output_dir = env;
  }
  if (!o.modes.empty()) config.modes = o.modes;
  config.validate();
  if (o.dry_run) {
    std::cout << dragd::config_to_json(config) << '\n';
    return 0;
  }
  const dragd::RunOutcome outcome = dragd::run_experiment(config);
  std::cout << dragd::format_report(config.output_dir);
  std::cout << "artifacts: " << config.output_dir.string() << '\n';
  (void)outcome;
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t configs, std::size_t coords) {
  const auto suites = dragd::run_engine_suites({seed, configs, coords});
  bool ok = true;
  for (const auto& s : suites) {
    std::printf("%-48s max rel err %-12s tol %-8s %s\n", s.name.c_str(),
                dragd::format_metric(s.max_rel_error()).c_str(), dragd::format_metric(s.tolerance).c_str(),
                s.passed() ? "PASS" : "FAIL");
    for (const auto& f : s.failures()) std::printf("    failed: %s\n", f.c_str());
    ok = ok && s.passed();
  }
  return ok ? 0 : 1;
}

int cmd_report(const std::string& dir) {
  std::cout << dragd::format_report(dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-matching reconstruction attacks against federated unlearning"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Train, unlearn, capture gradients and attack, as the config describes");
  run_cmd->add_option("--config", run.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seed, "Override the master seed");
  run_cmd->add_option("--out", run.out, std::string("Output directory (beats $") + kOutEnv + " and the config)");
  run_cmd->add_flag("--dry-run", run.dry_run, "Validate and print the resolved config without writing anything");
  run_cmd->add_option("--modes", run.modes, "Comma-separated attack modes")->delimiter(',');

  std::uint64_t gc_seed = 0;
  std::size_t gc_configs = 6, gc_coords = 64;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Check engine gradients against finite differences");
  gc_cmd->add_option("--seed", gc_seed, "Seed for the randomized cases")->capture_default_str();
  gc_cmd->add_option("--configs", gc_configs, "Random model configurations")->capture_default_str();
  gc_cmd->add_option("--coords", gc_coords, "Coordinates sampled per configuration")->capture_default_str();

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "Print the comparison table of a finished run");
  report_cmd->add_option("run_dir", report_dir, "Run directory");
  report_cmd->add_option("--out", report_dir, "Run directory (alternative to the positional form)");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));
  spdlog::set_pattern("[%l] %v");

  try {
    if (*run_cmd) return cmd_run(run);
    if (*gc_cmd) return cmd_gradcheck(gc_seed, gc_configs, gc_coords);
    if (*report_cmd) {
      if (report_dir.empty()) {
        const char* env = std::getenv(kOutEnv);
        if (env == nullptr || *env == '\0') {
          std::cerr << "error: report needs a run directory\n";
          return 2;
        }
        report_dir = env;
      }
      return cmd_report(report_dir);
    }
  } catch (const dragd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const dragd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
