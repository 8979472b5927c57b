// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "matbrw/brw.hpp"
#include "matbrw/error.hpp"
#include "matbrw/parallel.hpp"

using namespace matbrw;

namespace {
BranchingModel binary_lognormal(double mu = 0.1, double sd = 1.0) {
  return BranchingModel{OffspringLaw(), MatrixLaw(1, ScalarLognormal{mu, sd})};
}

Vec e1(int d) {
  Vec x = Vec::Zero(d);
  x(0) = 1.0;
  return x;
}

SimulationOptions options(int d, int n) {
  SimulationOptions o;
  o.x = e1(d);
  o.n_max = n;
  return o;
}
}  // namespace

TEST_CASE("single line of descent is a random walk") {
  const BranchingModel m{OffspringLaw::explicit_probabilities({0.0, 1.0}), MatrixLaw(1, ScalarLognormal{0.5, 1.0})};
  const SimulationResult r = simulate(m, options(1, 30), RandomStream(1));
  CHECK(r.status == SimulationStatus::Completed);
  REQUIRE(r.generations.size() == 31);
  for (const GenerationRecord& g : r.generations) CHECK(g.size() == 1);
  const ExtremalSeries ex = extremal(r, DirectionSet::full());
  for (std::size_t i = 0; i < ex.n.size(); ++i) CHECK(ex.max[i] == ex.min[i]);
}

TEST_CASE("extinction") {
  const BranchingModel m{OffspringLaw::explicit_probabilities({1.0}), MatrixLaw(1, ScalarLognormal{})};
  const SimulationResult r = simulate(m, options(1, 5), RandomStream(2));
  CHECK(r.status == SimulationStatus::Extinct);
  CHECK_FALSE(r.survived());
  const ExtremalSeries ex = extremal(r, DirectionSet::full());
  REQUIRE(ex.n.size() == 1);
  CHECK(ex.n[0] == 1);
  CHECK(ex.max[0] == -std::numeric_limits<double>::infinity());
  CHECK(ex.min[0] == std::numeric_limits<double>::infinity());
}

TEST_CASE("binary populations and positions") {
  const BranchingModel m = binary_lognormal(0.1, 1.0);
  RunningStats mean_pos;
  for (int t = 0; t < 20; ++t) {
    const SimulationResult r = simulate(m, options(1, 10), RandomStream(3).child(t));
    for (int n = 0; n <= 10; ++n) CHECK(r.generations[n].size() == (std::size_t{1} << n));
    for (double p : r.generations[10].position) mean_pos.add(p);
  }
  CHECK(mean_pos.mean() == doctest::Approx(1.0).epsilon(5e-2));
  const SimulationResult r = simulate(m, options(1, 8), RandomStream(4));
  RandomStream cr(5);
  CHECK(cocycle_spot_check(m, r, 200, cr) < 1e-12);
}

TEST_CASE("cocycle spot check in d = 3") {
  const BranchingModel m{OffspringLaw::poisson(1.6), MatrixLaw(3, Ginibre{})};
  const SimulationResult r = simulate(m, options(3, 8), RandomStream(6));
  RandomStream cr(7);
  CHECK(cocycle_spot_check(m, r, 300, cr) < 1e-10);
  for (std::size_t i = 0; i < r.generations.back().size(); ++i)
    CHECK(r.generations.back().direction_at(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ulam-harris labels") {
  const BranchingModel m = binary_lognormal();
  const SimulationResult r = simulate(m, options(1, 4), RandomStream(8));
  CHECK(ulam_harris(r, 0, 0).empty());
  for (std::size_t i = 0; i < 16; ++i) {
    const auto label = ulam_harris(r, 4, i);
    REQUIRE(label.size() == 4);
    std::size_t idx = 0;
    for (std::uint32_t c : label) idx = 2 * idx + c;
    CHECK(idx == i);
  }
}

TEST_CASE("direction sets") {
  const BranchingModel m{OffspringLaw(), MatrixLaw(2, Ginibre{})};
  const SpectralEngine eng(m);
  const SpectralData sd = eng.leading_eigen(1.0);
  const DirectionSet half = DirectionSet::angle_interval(0.0, 0.5 * M_PI);
  CHECK(half.nu_mass(sd) == doctest::Approx(0.5).epsilon(1e-2));
  CHECK(DirectionSet::full().nu_mass(sd) == doctest::Approx(1.0));
  Vec x(2);
  x << std::cos(0.3), std::sin(0.3);
  CHECK(half.contains(x));
  CHECK(half.contains(-x));
  x << std::cos(2.0), std::sin(2.0);
  CHECK_FALSE(half.contains(x));
  const DirectionSet cap = DirectionSet::cap(ProjPoint::basis(2, 0), 0.1);
  CHECK(cap.contains(e1(2)));
  CHECK_FALSE(cap.contains(Vec::Ones(2).normalized()));

  std::size_t hits = 0, total = 0;
  const SimulationResult r = simulate(m, options(2, 11), RandomStream(9));
  const ExtremalSeries all = extremal(r, DirectionSet::full());
  const ExtremalSeries sub = extremal(r, half);
  for (std::size_t i = 0; i < all.n.size(); ++i) {
    CHECK(sub.hits[i] <= all.hits[i]);
    if (sub.hits[i] > 0) {
      CHECK(sub.max[i] <= all.max[i]);
      CHECK(sub.min[i] >= all.min[i]);
    }
  }
  hits = sub.hits.back();
  total = all.hits.back();
  CHECK(std::abs(double(hits) / double(total) - 0.5) < 0.05);
}

TEST_CASE("simulation is deterministic across thread counts") {
  const BranchingModel m{OffspringLaw::geometric(1.5), MatrixLaw(2, DiagRotation{})};
  const unsigned before = thread_count();
  set_thread_count(1);
  const SimulationResult a = simulate(m, options(2, 12), RandomStream(10));
  set_thread_count(3);
  const SimulationResult b = simulate(m, options(2, 12), RandomStream(10));
  set_thread_count(before);
  REQUIRE(a.generations.size() == b.generations.size());
  for (std::size_t n = 0; n < a.generations.size(); ++n) {
    CHECK(a.generations[n].position == b.generations[n].position);
    CHECK(a.generations[n].parent == b.generations[n].parent);
  }
  const SimulationResult c = simulate(m, options(2, 12), RandomStream(11));
  CHECK(c.root_key != a.root_key);
}

TEST_CASE("population mean") {
  const BranchingModel m{OffspringLaw::poisson(1.5), MatrixLaw(1, ScalarLognormal{})};
  RunningStats z;
  for (int t = 0; t < 4000; ++t) {
    const SimulationResult r = simulate(m, options(1, 6), RandomStream(12).child(t));
    z.add(r.generations.size() == 7 ? double(r.generations[6].size()) : 0.0);
  }
  CHECK(std::abs(z.mean() - std::pow(1.5, 6)) < 4 * z.stderr_mean());
}

TEST_CASE("norm variants") {
  SUBCASE("d = 1 variants coincide with the position") {
    SimulationOptions o = options(1, 6);
    o.track_variants = true;
    const SimulationResult r = simulate(binary_lognormal(), o, RandomStream(13));
    const GenerationRecord& g = r.generations.back();
    REQUIRE(g.has_variants);
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(g.log_coeff[i] == doctest::Approx(g.position[i]).epsilon(1e-10));
      CHECK(g.log_norm[i] == doctest::Approx(g.position[i]).epsilon(1e-10));
      CHECK(g.log_specrad[i] == doctest::Approx(g.position[i]).epsilon(1e-10));
    }
  }
  SUBCASE("orthogonal products have unit norm") {
    SimulationOptions o = options(3, 5);
    o.track_variants = true;
    const BranchingModel m{OffspringLaw(), MatrixLaw(3, Orthogonal{})};
    const SimulationResult r = simulate(m, o, RandomStream(14));
    const GenerationRecord& g = r.generations.back();
    for (std::size_t i = 0; i < g.size(); ++i) {
      CHECK(std::abs(g.position[i]) < 1e-10);
      CHECK(std::abs(g.log_norm[i]) < 1e-10);
      CHECK(std::abs(g.log_specrad[i]) < 1e-10);
    }
  }
  SUBCASE("ordering holds generation by generation") {
    SimulationOptions o = options(2, 10);
    o.track_variants = true;
    const BranchingModel m{OffspringLaw(), MatrixLaw(2, Ginibre{})};
    const SimulationResult r = simulate(m, o, RandomStream(15));
    const VariantSeries v = variant_extremal(r, DirectionSet::full());
    CHECK(v.all_ordered());
    const SimulationResult plain = simulate(m, options(2, 4), RandomStream(15));
    try {
      (void)variant_extremal(plain, DirectionSet::full());
      FAIL("expected VariantsNotTracked");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::VariantsNotTracked);
    }
  }
}

TEST_CASE("many-to-one at s = 0") {
  const BranchingModel m{OffspringLaw::explicit_probabilities({0.2, 0.3, 0.5}), MatrixLaw(1, ScalarLognormal{})};
  const SpectralEngine eng(m);
  const WalkKernel k(m, eng.leading_eigen(0.0));
  auto h = [](const Vec&, double u) { return u >= 0.0 ? 1.0 : 0.0; };
  const ManyToOneResult r = many_to_one_check(m, k, e1(1), 5, h, 20000, 100000, RandomStream(16));
  CHECK(std::abs(r.z) < 4.0);
  CHECK(r.rhs.value == doctest::Approx(0.5 * std::pow(1.3, 5)).epsilon(2e-2));
  CHECK_THROWS_AS(many_to_one_check(m, k, e1(1), 13, h, 10, 10, RandomStream(1)), Error);
}

TEST_CASE("first moment counts every particle without constraints") {
  const BranchingModel m = binary_lognormal(0.0, 1.0);
  const SpectralEngine eng(m);
  const WalkKernel k(m, eng.leading_eigen(0.7));
  FirstMomentOptions o;
  o.fixed_threshold = true;
  const auto rows = first_moment_tail(k, 2.0, e1(1), {4, 8}, o, 200000, RandomStream(17));
  for (const FirstMomentRow& row : rows)
    CHECK(std::abs(row.expected_count.value / std::pow(2.0, row.n) - 1.0) <
          4 * row.expected_count.se / std::pow(2.0, row.n));
  o.threshold = 1e9;
  const auto none = first_moment_tail(k, 2.0, e1(1), {4}, o, 1000, RandomStream(17));
  CHECK(none[0].expected_count.value == 0.0);
}

TEST_CASE("population cap") {
  SimulationOptions o = options(1, 20);
  o.population_cap = 1000;
  const SimulationResult r = simulate(binary_lognormal(), o, RandomStream(18));
  CHECK(r.status == SimulationStatus::CapExceeded);
  CHECK(r.last_generation == 9);
  CHECK(r.offending_generation == 10);
  o.strict = true;
  try {
    (void)simulate(binary_lognormal(), o, RandomStream(18));
    FAIL("expected PopulationCapExceeded");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::PopulationCapExceeded);
  }
}

TEST_CASE("generation files") {
  SimulationOptions o = options(2, 5);
  o.track_variants = true;
  const BranchingModel m{OffspringLaw::poisson(1.8), MatrixLaw(2, Ginibre{})};
  const SimulationResult r = simulate(m, o, RandomStream(19));
  const auto path = std::filesystem::temp_directory_path() / "matbrw_generations.bin";
  write_generations(path.string(), r);
  const std::vector<GenerationRecord> back = read_generations(path.string());
  REQUIRE(back.size() == r.generations.size());
  for (std::size_t n = 0; n < back.size(); ++n) {
    CHECK(back[n].position == r.generations[n].position);
    CHECK(back[n].direction == r.generations[n].direction);
    CHECK(back[n].parent == r.generations[n].parent);
    CHECK(back[n].log_norm == r.generations[n].log_norm);
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_generations(path.string()), Error);

  std::ostringstream csv;
  write_generation_csv(csv, r, DirectionSet::full());
  std::istringstream in(csv.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  CHECK(lines >= r.generations.size());
}
