// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "matbrw/error.hpp"
#include "matbrw/parallel.hpp"
#include "matbrw/walk.hpp"

using namespace matbrw;

namespace {
struct D1 {
  BranchingModel model{OffspringLaw(), MatrixLaw(1, ScalarLognormal{0.0, 1.0})};
  SpectralEngine engine{model};
};

WalkKernel calibrated_d1(double mu = 0.0, double sd = 1.0) {
  const BranchingModel m{OffspringLaw(), MatrixLaw(1, ScalarLognormal{mu, sd})};
  const SpectralEngine eng(m);
  const BoundaryCalibration cal = eng.calibrate_boundary(+1);
  const BranchingModel cm = calibrated_model(m, cal);
  return WalkKernel(cm, SpectralEngine(cm).leading_eigen(cal.s));
}

Vec e1(int d) {
  Vec x = Vec::Zero(d);
  x(0) = 1.0;
  return x;
}

double binom_half(int n) {  // C(2n, n) / 4^n
  double p = 1.0;
  for (int k = 1; k <= n; ++k) p *= (2.0 * k - 1.0) / (2.0 * k);
  return p;
}
}  // namespace

TEST_CASE("rayleigh limit law") {
  auto f = [](double t) { return rayleigh_pdf(t); };
  CHECK(boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 40.0, 10, 1e-13) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rayleigh_cdf(0.0) == 0.0);
  CHECK(rayleigh_cdf(1.0) == doctest::Approx(1.0 - std::exp(-0.5)).epsilon(1e-14));
}

TEST_CASE("changed and dual increments in d = 1") {
  const D1 f;
  const double s = 0.5;
  const WalkKernel k(f.model, f.engine.leading_eigen(s));
  CHECK(k.sampler() == SamplerKind::Exact);
  RandomStream r(11);
  RunningStats ch, du, pl;
  const Vec x = e1(1);
  for (int i = 0; i < 100000; ++i) {
    ch.add(k.step_changed(x, r).increment);
    du.add(k.step_dual(x, r).increment);
    pl.add(k.step_plain(x, r).increment);
  }
  CHECK(std::abs(ch.mean() - s) < 4 * ch.stderr_mean());
  CHECK(std::abs(du.mean() + s) < 4 * du.stderr_mean());
  CHECK(std::abs(pl.mean()) < 4 * pl.stderr_mean());
  CHECK(ch.variance() == doctest::Approx(1.0).epsilon(2e-2));
  CHECK(du.variance() == doctest::Approx(1.0).epsilon(2e-2));
}

TEST_CASE("trivial tilts and laws") {
  SUBCASE("s = 0 has unit weights") {
    const D1 f;
    const WalkKernel k(f.model, f.engine.leading_eigen(0.0));
    RandomStream r(12);
    for (int i = 0; i < 100; ++i) CHECK(k.step_changed(e1(1), r).weight_diag == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal law does not move the norm") {
    const BranchingModel m{OffspringLaw(), MatrixLaw(3, Orthogonal{})};
    const WalkKernel k(m, SpectralEngine(m).leading_eigen(1.0));
    CHECK(k.spectral().sigma2 == doctest::Approx(0.0).epsilon(1e-12));
    RandomStream r(13);
    for (int i = 0; i < 50; ++i) {
      CHECK(std::abs(k.step_changed(e1(3), r).increment) < 1e-12);
      CHECK(std::abs(k.step_dual(e1(3), r).increment) < 1e-12);
    }
    CHECK_THROWS_AS(conditioned_cdf(k, Measure::Changed, e1(3), 1.0, 10, 2000, RandomStream(1)), Error);
  }
}

TEST_CASE("resampling agrees with the exact sampler") {
  const BranchingModel m{OffspringLaw(), MatrixLaw(2, Ginibre{})};
  const SpectralEngine eng(m);
  const SpectralData sd = eng.leading_eigen(1.5);
  WalkConfig ex, sir;
  ex.sampler = SamplerKind::Exact;
  sir.sampler = SamplerKind::Resample;
  sir.candidates = 256;
  const WalkKernel ke(m, sd, ex), ks(m, sd, sir);
  RandomStream r(14);
  RunningStats a, b, ca, cb;
  Vec x(2);
  x << 0.6, 0.8;
  for (int i = 0; i < 40000; ++i) {
    const WalkStep u = ke.step_changed(x, r), v = ks.step_changed(x, r);
    a.add(u.increment);
    b.add(v.increment);
    ca.add(u.x(0) * u.x(0));
    cb.add(v.x(0) * v.x(0));
  }
  CHECK(std::abs(a.mean() - b.mean()) < 4 * std::hypot(a.stderr_mean(), b.stderr_mean()));
  CHECK(std::abs(ca.mean() - cb.mean()) < 4 * std::hypot(ca.stderr_mean(), cb.stderr_mean()));
  CHECK(std::abs(a.mean() - sd.dlambda) < 4 * a.stderr_mean());
}

TEST_CASE("exit times") {
  WalkPath p;
  p.s = {0.0, -0.5, 0.5, 1.5, -1.5};
  ExitStats e = exit_time(p, 1.0);
  REQUIRE(e.tau);
  CHECK(*e.tau == 3);
  REQUIRE(e.tau_tilde);
  CHECK(*e.tau_tilde == 4);
  CHECK(e.survives(2));
  CHECK_FALSE(e.survives(3));
  e = exit_time(p, 2.0);
  CHECK_FALSE(e.tau);
  CHECK(e.survives(4));
  CHECK_THROWS_AS(exit_time(p, -1.0), Error);
}

TEST_CASE("sparre andersen survival at y = 0") {
  const WalkKernel k = calibrated_d1(0.2, 0.7);
  const std::vector<ExitProbabilityRow> rows =
      exit_probability(k, Measure::Changed, e1(1), {0.0}, {1, 2, 4, 8}, 200000, RandomStream(15));
  CHECK(binom_half(4) == 0.2734375);
  for (const ExitProbabilityRow& row : rows)
    CHECK(std::abs(row.probability.value - binom_half(row.n)) < 4.5 * row.probability.se);
}

TEST_CASE("exit and local probabilities") {
  const WalkKernel k = calibrated_d1();
  const std::vector<double> ys{0.0, 1.0, 3.0};
  const std::vector<int> ns{16, 32};
  const auto ex = exit_probability(k, Measure::Changed, e1(1), ys, ns, 20000, RandomStream(16));
  const auto lo = local_probability(k, Measure::Changed, e1(1), ys, ns, 0.0, 1.0, 20000, RandomStream(16));
  for (int n : ns) {
    double prev = -1.0;
    for (const auto& row : ex)
      if (row.n == n) {
        CHECK(row.probability.value >= prev);
        prev = row.probability.value;
      }
  }
  for (const auto& row : lo) {
    CHECK(row.probability.value <= row.exit_probability.value);
    CHECK(row.probability.value >= 0.0);
  }
  const auto empty = local_probability(k, Measure::Changed, e1(1), {1.0}, {8}, 0.5, 0.5, 5000, RandomStream(17));
  CHECK(empty[0].probability.value == 0.0);
  CHECK_THROWS_AS(local_probability(k, Measure::Changed, e1(1), {1.0}, {8}, 2.0, 1.0, 100, RandomStream(1)), Error);
}

TEST_CASE("conditioned law") {
  const WalkKernel k = calibrated_d1();
  const ConditionedLaw law = conditioned_cdf(k, Measure::Changed, e1(1), 0.0, 64, 100000, RandomStream(18));
  CHECK(law.survivors >= 1000);
  CHECK(law.ks_uncertainty == doctest::Approx(0.5 / std::sqrt(double(law.survivors))));
  CHECK(law.ks < 0.06);
  CHECK(std::is_sorted(law.values.begin(), law.values.end()));
  try {
    (void)conditioned_cdf(k, Measure::Changed, e1(1), 0.0, 64, 2000, RandomStream(18));
    FAIL("expected TooFewSurvivors");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TooFewSurvivors);
  }
}

TEST_CASE("harmonic function") {
  const WalkKernel k = calibrated_d1();
  const HarmonicEstimate v0 = harmonic_V(k, Measure::Changed, e1(1), 0.0, 64, 20000, RandomStream(19), false);
  CHECK(v0.limit.value > 0.0);
  const HarmonicEstimate v50 = harmonic_V(k, Measure::Changed, e1(1), 50.0, 64, 20000, RandomStream(20), false);
  CHECK(v50.limit.value / 50.0 >= 0.9);
  CHECK(v50.limit.value / 50.0 <= 1.1);
  CHECK(v50.ns.size() == 4);
  CHECK_THROWS_AS(harmonic_V(k, Measure::Plain, e1(1), 1.0, 64, 100, RandomStream(1)), Error);
}

TEST_CASE("duality") {
  SUBCASE("d = 1") {
    const WalkKernel k = calibrated_d1();
    const BoxFunction phi{[](const Vec&) { return 1.0; }, 0.0, 2.0};
    const BoxFunction psi{[](const Vec&) { return 1.0; }, 0.5, 1.5};
    const DualityResult d = verify_duality(k, 6, phi, psi, 100000, RandomStream(21));
    CHECK(std::abs(d.z) < 4.0);
    CHECK(d.lhs.value > 0.0);
  }
  SUBCASE("orthogonal") {
    const BranchingModel m{OffspringLaw(), MatrixLaw(2, Orthogonal{})};
    const WalkKernel k(m, SpectralEngine(m).leading_eigen(1.0));
    const BoxFunction phi{[](const Vec& x) { return x(0) * x(0); }, 0.0, 1.0};
    const BoxFunction psi{[](const Vec& x) { return x(1) * x(1); }, 0.0, 1.0};
    const DualityResult d = verify_duality(k, 3, phi, psi, 50000, RandomStream(22));
    CHECK(std::abs(d.z) < 4.0);
    CHECK(d.lhs.value == doctest::Approx(0.25).epsilon(5e-2));
  }
}

TEST_CASE("martingale approximation is exact in d = 1") {
  const D1 f;
  const SpectralData sd = f.engine.leading_eigen(0.8);
  const WalkKernel k(f.model, sd);
  const CohomologicalSolution th = f.engine.solve_cohomological(sd);
  const MartingaleReport rep = martingale_gap(k, th, e1(1), 50, 2000, RandomStream(23));
  CHECK(rep.max_gap < 1e-9);
  CHECK(rep.bound_ok);
  CHECK(std::abs(rep.martingale_increment_mean.value - sd.dlambda) < 4 * rep.martingale_increment_mean.se);
}

TEST_CASE("change of measure on a non-invariant law") {
  SpectralConfig cfg;
  cfg.grid_size = 128;
  cfg.pool_size = 20000;
  const BranchingModel m{OffspringLaw(), MatrixLaw(2, DiagRotation{})};
  const SpectralEngine eng(m, cfg);
  WalkConfig wc;
  wc.candidates = 64;
  const WalkKernel k(m, eng.leading_eigen(1.0), wc);
  auto h = [](const Vec& x, double s) { return (s > 0.0 ? 1.0 : 0.0) * (0.5 + x(0) * x(0)); };
  for (int n : {1, 4, 8}) {
    const ChangeOfMeasureResult c = change_of_measure_check(k, e1(2), n, h, 20000, RandomStream(24));
    CHECK(std::abs(c.z) < 4.0);
  }
}

TEST_CASE("stationary dual walk has the right drift") {
  const BranchingModel m{OffspringLaw(), MatrixLaw(2, Ginibre{})};
  const SpectralEngine eng(m);
  const BoundaryCalibration cal = eng.calibrate_boundary(+1);
  const BranchingModel cm = calibrated_model(m, cal);
  const WalkKernel k(cm, SpectralEngine(cm).leading_eigen(cal.s));
  RunningStats changed, dual;
  RandomStream r(25);
  for (int i = 0; i < 50000; ++i) {
    const Vec x = k.sample_stationary(r);
    changed.add(k.step_changed(x, r).increment);
    dual.add(k.step_dual(x, r).increment);
  }
  CHECK(std::abs(changed.mean()) < 4 * changed.stderr_mean() + 1e-3);
  CHECK(std::abs(dual.mean()) < 4 * dual.stderr_mean() + 1e-3);
}

TEST_CASE("path streams") {
  const WalkKernel k = calibrated_d1();
  const RandomStream root(26);
  const WalkPath a = sample_path(k, Measure::Changed, e1(1), 10, root);
  const WalkPath b = sample_path(k, Measure::Changed, e1(1), 20, root);
  for (int i = 0; i <= 10; ++i) CHECK(a.s[static_cast<std::size_t>(i)] == b.s[static_cast<std::size_t>(i)]);
  CHECK(a.length() == 10);

  const unsigned before = thread_count();
  set_thread_count(1);
  const auto one = exit_probability(k, Measure::Changed, e1(1), {1.0}, {8}, 5000, RandomStream(27));
  set_thread_count(3);
  const auto three = exit_probability(k, Measure::Changed, e1(1), {1.0}, {8}, 5000, RandomStream(27));
  set_thread_count(before);
  CHECK(one[0].probability.value == three[0].probability.value);
  CHECK(one[0].probability.se == three[0].probability.se);
}

TEST_CASE("local limit comparison") {
  const WalkKernel k = calibrated_d1();
  const SeparableFunction h{[](const Vec&) { return 1.0; }, [](double u) { return u >= 0.0 && u <= 1.0 ? 1.0 : 0.0; }, 0.0, 1.0};
  CHECK_THROWS_AS(llt_unconditioned(k, e1(1), 0.0, {8}, h, 500, RandomStream(1)), Error);
  const auto rows = llt_unconditioned(k, e1(1), 0.0, {16, 64}, h, 100000, RandomStream(28));
  for (const LltRow& row : rows) {
    CHECK(row.rhs > 0.0);
    CHECK(std::abs(row.lhs.value - row.rhs) < 4 * row.lhs.se + 0.1 * row.rhs);
  }
}
