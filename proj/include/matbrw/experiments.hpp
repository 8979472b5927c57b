// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "matbrw/brw.hpp"
#include "matbrw/model.hpp"
#include "matbrw/spectral.hpp"
#include "matbrw/stats.hpp"
#include "matbrw/walk.hpp"

namespace matbrw {

inline constexpr const char* kLibraryVersion = "0.1.0";

const std::vector<std::string>& experiment_names();

struct DirectionSetSpec {
  std::string kind = "full";  // full | angle | cap
  double theta1 = 0.0;
  double theta2 = 0.0;
  std::vector<double> center;
  double radius = 1.0;
  DirectionSet build(int d) const;
};

// Every knob has a default; see docs/experiments.md.
struct ExperimentConfig {
  std::string name;
  BranchingModel model;
  std::uint64_t seed = 1;
  std::string out = "out";
  unsigned threads = 0;

  SpectralConfig spectral;
  std::vector<double> s_values = {0.25, 0.5, 1.0, 1.5};

  WalkConfig walk;
  std::size_t reps = 100000;
  std::vector<int> ns;
  std::vector<double> ys;
  std::vector<double> x;  // start direction, default e_1
  bool calibrate = true;  // walk experiments run under Q_alpha of the calibrated model
  int sign = 1;
  std::string measure = "changed";  // changed | dual
  int horizon = 256;                // harmonic-function horizon
  double a = 0.0;
  double b = 1.0;

  std::vector<double> phi_angle = {0.0, 1.5};
  std::vector<double> phi_y = {0.5, 1.5};
  std::vector<double> psi_angle = {0.5, 2.5};
  std::vector<double> psi_y = {0.0, 2.0};

  int n_max = 20;
  std::size_t trees = 50;
  std::size_t population_cap = 2000000;
  bool track_variants = false;
  DirectionSetSpec set;
  std::size_t tree_reps = 10000;
  // many-to-one test function: "one" (h = 1) or "nonnegative" (h = 1[u >= 0])
  std::string test_function = "one";

  double epsilon = 0.3;
  double barrier = 1.5;  // on sign * S_k; "inf" disables it

  std::optional<double> ks_max;  // default 0.02 for d = 1, else 0.05
  double z_max = 3.0;

  std::string source;  // canonical text the content hash is taken over
};

ExperimentConfig parse_config(const std::string& toml_text, const std::string& origin = "<string>");
ExperimentConfig load_config(const std::string& path);
// The [model] table alone.
BranchingModel parse_model(const std::string& toml_text, const std::string& origin = "<string>");

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Headline {
  std::string name;
  Estimate value;
};

struct ExperimentOutcome {
  std::vector<CheckResult> checks;
  std::vector<Headline> headlines;
  std::vector<std::string> artifacts;
  std::optional<std::string> error;  // "<code>: message" when a module error stopped the run
  bool pass() const;
};

struct RunManifest {
  std::string experiment;
  std::string config_echo;
  std::string input_hash;  // sha1 of "blob <len>\0" + config text
  std::string started;
  std::string finished;
  std::string library_version = kLibraryVersion;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  ExperimentOutcome outcome;
};

// Content hash in git blob form.
std::string git_blob_hash(const std::string& content);

// Dispatches on config.name, writes CSVs and manifest.json into config.out.
RunManifest run(const ExperimentConfig& config);
// Same without touching the filesystem.
ExperimentOutcome run_in_memory(const ExperimentConfig& config);

void write_manifest(const std::string& path, const RunManifest& manifest);

struct SweepRow {
  std::string headline;
  double factor = 1.0;
  Estimate base;
  Estimate value;
  double drift = 0.0;      // |value - base|
  double allowance = 0.0;  // 2 * combined uncertainty
  bool pass = false;
};

struct SweepTable {
  std::string knob;
  std::vector<double> factors;
  std::vector<SweepRow> rows;
  bool pass() const;
};

// knob in {K, M, W, reps}. The rep knob compares standard errors: doubling
// reps must shrink them by a factor in [1.2, 1.7].
SweepTable resolution_sweep(const ExperimentConfig& config, const std::string& knob,
                            const std::vector<double>& factors);

void write_sweep_csv(const std::string& path, const SweepTable& table);

}  // namespace matbrw
