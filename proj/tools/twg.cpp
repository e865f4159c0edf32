// twg: band structure, critical levels, Mourre certificates, conjugate flow and tube diagnostics.
//
// Exit codes: 0 ok, 2 configuration error, 3 solver error, 4 critical energy.

#include "twg/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <string>

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kSolver = 3, kCritical = 4 };

int run(const std::string& command, const std::string& config_path, const std::string& out_dir, unsigned jobs,
        const std::optional<std::uint64_t>& seed) {
  twg::RunConfig cfg = twg::load_config(config_path);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (seed) cfg.seed = *seed;
  twg::worker_count() = jobs;
  twg::Pipeline p(std::move(cfg));
  twg::Json result;
  if (command == "bands") {
    result = twg::run_bands(p);
  } else if (command == "critical") {
    result = twg::run_critical(p);
  } else if (command == "mourre") {
    result = twg::run_mourre(p);
    if (!result["all_pass"].get<bool>()) std::cerr << "warning: at least one Mourre certificate failed\n";
  } else if (command == "flow") {
    result = twg::run_flow(p);
  } else if (command == "tube") {
    result = twg::run_tube(p);
  } else {
    result = twg::run_report(p);
  }
  std::cout << "wrote " << command << " output to " << p.out().string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Band structure and Mourre-estimate toolkit for twisted waveguides"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  unsigned jobs = 0;
  std::uint64_t seed_value = 0;
  app.add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.add_option("--jobs", jobs, "worker threads (0: all logical cores)");
  auto* seed_opt = app.add_option("--seed", seed_value, "seed for stochastic estimators");
  for (const char* name : {"bands", "critical", "mourre", "flow", "tube", "report"}) app.add_subcommand(name)->fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  std::optional<std::uint64_t> seed;
  if (seed_opt->count() > 0) seed = seed_value;
  try {
    return run(command, config_path, out_dir, jobs, seed);
  } catch (const twg::CriticalEnergyError& e) {
    std::cerr << "critical energy: " << e.what() << "\n";
    return kCritical;
  } catch (const twg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const twg::GeometryError& e) {
    std::cerr << "geometry error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kSolver;
  }
}
