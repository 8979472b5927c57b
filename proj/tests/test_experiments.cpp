// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "matbrw/error.hpp"
#include "matbrw/experiments.hpp"
#include "matbrw/parallel.hpp"

using namespace matbrw;
namespace fs = std::filesystem;

namespace {
const std::string kD1Model = R"(
[model]
dim = 1
offspring = { kind = "binary" }
components = [ { kind = "lognormal", mean = 0.0, sd = 1.0 } ]
)";

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".csv") continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[e.path().filename().string()] = ss.str();
  }
  return out;
}
}  // namespace

TEST_CASE("shipped configs parse") {
  const fs::path dir = fs::path(MATBRW_SOURCE_DIR) / "configs";
  std::size_t count = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".toml") continue;
    CAPTURE(e.path().string());
    const ExperimentConfig c = load_config(e.path().string());
    CHECK(std::find(experiment_names().begin(), experiment_names().end(), c.name) != experiment_names().end());
    ++count;
  }
  CHECK(count >= 14);
}

TEST_CASE("config errors") {
  const std::string head = "[experiment]\nname = \"spectral\"\n";
  CHECK_NOTHROW(parse_config(head + kD1Model));
  CHECK(code_of([&] { parse_config(head + "bogus = 1\n" + kD1Model); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { parse_config("[experiment]\nname = \"nope\"\n" + kD1Model); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { parse_config("[experiment]\nname = \"spectral\"\nseed = \"x\"\n" + kD1Model); }) ==
        ErrorCode::ConfigError);
  CHECK(code_of([&] { parse_config(head + kD1Model + "[walk]\nreps = 10\nfoo = 2\n"); }) == ErrorCode::ConfigError);
  CHECK(code_of([&] { parse_config(head + "[model]\ndim = 1\ncomponents = [ { kind = \"weird\" } ]\n"); }) ==
        ErrorCode::ConfigError);
  CHECK(code_of([&] { parse_config("not toml ]["); }) == ErrorCode::ConfigError);
  const ExperimentConfig c = parse_config(head + kD1Model + "[first_moment]\nbarrier = \"inf\"\n");
  CHECK(std::isinf(c.barrier));
}

TEST_CASE("content hash") {
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("module errors are reported in the outcome") {
  const ExperimentConfig c = load_config((fs::path(MATBRW_SOURCE_DIR) / "configs" / "calibrate_two_atom.toml").string());
  const ExperimentOutcome o = run_in_memory(c);
  REQUIRE(o.error);
  CHECK(o.error->find("NotCalibratable") != std::string::npos);
  CHECK_FALSE(o.pass());
}

TEST_CASE("spectral experiment passes its oracle checks") {
  const ExperimentConfig c = load_config((fs::path(MATBRW_SOURCE_DIR) / "configs" / "spectral_lognormal.toml").string());
  const ExperimentOutcome o = run_in_memory(c);
  CHECK_FALSE(o.error);
  CHECK(o.pass());
  CHECK_FALSE(o.checks.empty());
}

TEST_CASE("runs are byte-reproducible") {
  const fs::path base = fs::temp_directory_path() / "matbrw_repro";
  fs::remove_all(base);
  const std::string text = "[experiment]\nname = \"walk-clt\"\nseed = 5\n" + kD1Model +
                           "[walk]\nreps = 40000\nn = [64]\ny = [1.0]\n";
  std::vector<std::map<std::string, std::string>> outputs;
  const unsigned before = thread_count();
  for (unsigned threads : {1u, 1u, 3u}) {
    ExperimentConfig c = parse_config(text);
    c.threads = threads;
    c.out = (base / ("t" + std::to_string(outputs.size()))).string();
    const RunManifest m = run(c);
    CHECK(m.input_hash.size() == 40);
    CHECK(fs::exists(fs::path(c.out) / "manifest.json"));
    outputs.push_back(csv_files(c.out));
  }
  set_thread_count(before);
  REQUIRE_FALSE(outputs[0].empty());
  CHECK(outputs[0] == outputs[1]);
  CHECK(outputs[0] == outputs[2]);
  fs::remove_all(base);
}

TEST_CASE("resolution sweeps") {
  const std::string text = "[experiment]\nname = \"spectral\"\n" + kD1Model +
                           "[spectral]\nmethod = \"pool\"\npool = 20000\ns = [0.5, 1.0]\n";
  const SweepTable pool = resolution_sweep(parse_config(text), "M", {1.0, 2.0});
  CHECK(pool.knob == "M");
  CHECK_FALSE(pool.rows.empty());
  for (const SweepRow& row : pool.rows) CHECK(row.drift <= row.allowance);
  CHECK(code_of([&] { resolution_sweep(parse_config(text), "Q", {1.0}); }) == ErrorCode::ConfigError);
}
