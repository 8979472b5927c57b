// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "matbrw/error.hpp"
#include "matbrw/experiments.hpp"
#include "matbrw/parallel.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Simulation and theorem checks for branching products of random matrices"};
  std::string experiment, config_path, out_dir, sweep;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::vector<double> factors = {1.0, 2.0};
  app.add_option("experiment", experiment, "Experiment name")
      ->required()
      ->check(CLI::IsMember(matbrw::experiment_names()));
  app.add_option("--config", config_path, "TOML config file")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Override experiment.seed");
  auto* thr_opt = app.add_option("--threads", threads, "Worker cap (MATBRW_THREADS wins when set)");
  auto* out_opt = app.add_option("--out", out_dir, "Output directory");
  app.add_option("--sweep", sweep, "Resolution sweep knob")->check(CLI::IsMember({"K", "M", "W", "reps"}));
  app.add_option("--factors", factors, "Sweep factors")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  try {
    matbrw::ExperimentConfig cfg = matbrw::load_config(config_path);
    if (cfg.name != experiment)
      throw matbrw::Error(matbrw::ErrorCode::ConfigError,
                          "config names experiment '" + cfg.name + "' but '" + experiment + "' was requested");
    if (*seed_opt) {
      cfg.seed = seed;
      cfg.spectral.seed = seed;
    }
    if (*thr_opt) cfg.threads = threads;
    if (*out_opt) cfg.out = out_dir;
    if (cfg.threads) matbrw::set_thread_count(cfg.threads);

    if (!sweep.empty()) {
      const matbrw::SweepTable t = matbrw::resolution_sweep(cfg, sweep, factors);
      std::filesystem::create_directories(cfg.out);
      const std::string path = (std::filesystem::path(cfg.out) / ("sweep_" + sweep + ".csv")).string();
      matbrw::write_sweep_csv(path, t);
      for (const auto& r : t.rows)
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.headline << " x" << r.factor << " drift=" << r.drift
                  << " allowance=" << r.allowance << "\n";
      std::cout << "sweep " << sweep << ": " << (t.pass() ? "PASS" : "FAIL") << " (" << path << ")\n";
      return t.pass() ? 0 : 1;
    }

    const matbrw::RunManifest m = matbrw::run(cfg);
    for (const auto& c : m.outcome.checks)
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    if (m.outcome.error) std::cerr << "error: " << *m.outcome.error << "\n";
    std::cout << experiment << ": " << (m.outcome.pass() ? "PASS" : "FAIL") << " (" << cfg.out << ")\n";
    return m.outcome.pass() ? 0 : 1;
  } catch (const matbrw::Error& e) {
    std::cerr << "error: " << matbrw::to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
