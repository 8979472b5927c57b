// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "matbrw/model.hpp"
#include "matbrw/spectral.hpp"
#include "matbrw/stats.hpp"

namespace matbrw {

enum class Measure { Plain, Changed, Dual };
// Exact: rejection from the exactly tilted law (invariant laws only).
// Resample: W fresh candidates per step, one selected by weight.
enum class SamplerKind { Automatic, Exact, Resample };

std::string to_string(Measure m);
std::string to_string(SamplerKind k);

struct WalkConfig {
  SamplerKind sampler = SamplerKind::Automatic;
  int candidates = 256;
};

struct WalkStep {
  Vec x;
  double increment = 0.0;
  double weight_diag = 1.0;
  Mat g;
};

// Transition kernels of the plain, changed-measure and dual chains built from
// one SpectralData. The matrix law is re-tilted to the data's tilt.
class WalkKernel {
 public:
  WalkKernel(const BranchingModel& model, SpectralData data, WalkConfig config = {});

  const SpectralData& spectral() const noexcept { return data_; }
  const MatrixLaw& law() const noexcept { return law_; }
  const WalkConfig& config() const noexcept { return config_; }
  SamplerKind sampler() const noexcept { return sampler_; }
  int dim() const noexcept { return law_.dim(); }
  double sigma() const noexcept { return std::sqrt(data_.sigma2); }

  WalkStep step(Measure m, const Vec& x, RandomStream& rng) const;
  WalkStep step_plain(const Vec& x, RandomStream& rng) const;
  WalkStep step_changed(const Vec& x, RandomStream& rng) const;
  WalkStep step_dual(const Vec& x, RandomStream& rng) const;

  double r(const Vec& x) const { return data_.r_at(x); }
  double pi_density(const Vec& x) const { return data_.pi_density_at(x); }
  Vec sample_stationary(RandomStream& rng) const;

 private:
  WalkStep changed_exact(const Vec& x, RandomStream& rng) const;
  WalkStep changed_resample(const Vec& x, RandomStream& rng) const;
  WalkStep dual_exact(const Vec& x, RandomStream& rng) const;
  WalkStep dual_resample(const Vec& x, RandomStream& rng) const;

  SpectralData data_;
  MatrixLaw law_;
  WalkConfig config_;
  SamplerKind sampler_;
  std::optional<TiltedSampler> tilted_;
  std::vector<double> pi_dot_;
  double r_max_ = 1.0;
  double dual_ratio_max_ = 1.0;
  double log_mass_ = 0.0;
};

inline WalkStep step_changed(const WalkKernel& k, const Vec& x, RandomStream& rng) { return k.step_changed(x, rng); }
inline WalkStep step_dual(const WalkKernel& k, const Vec& x, RandomStream& rng) { return k.step_dual(x, rng); }

struct WalkPath {
  Measure measure = Measure::Changed;
  Vec start;
  std::vector<Vec> x;          // X_0..X_n
  std::vector<double> s;       // S_0..S_n, S_0 = 0
  std::vector<double> weight_diag;
  std::vector<Mat> matrices;   // step matrices when recorded
  int length() const noexcept { return static_cast<int>(s.size()) - 1; }
};

// Step k draws from rng.child(k), so paths of different lengths share prefixes.
WalkPath sample_path(const WalkKernel& kernel, Measure m, const Vec& x0, int n, const RandomStream& rng,
                     bool keep_matrices = false);

struct ExitStats {
  double y = 0.0;
  int horizon = 0;
  std::optional<int> tau;        // first k >= 1 with y - S_k < 0
  std::optional<int> tau_tilde;  // first k >= 1 with y + S_k < 0
  bool survives(int n) const { return !tau || *tau > n; }
};

ExitStats exit_time(const WalkPath& path, double y);

struct HarmonicEstimate {
  Vec x;
  double y = 0.0;
  Measure measure = Measure::Changed;
  std::vector<int> ns;
  std::vector<Estimate> estimates;
  Estimate limit;
  bool plateau = false;
  double harmonicity_z = 0.0;
};

HarmonicEstimate harmonic_V(const WalkKernel& kernel, Measure m, const Vec& x, double y, int horizon,
                            std::size_t reps, const RandomStream& rng, bool require_plateau = true);

struct ConditionedLaw {
  int n = 0;
  double y = 0.0;
  std::size_t trials = 0;
  std::size_t survivors = 0;
  double ks = 0.0;
  double ks_uncertainty = 0.0;  // 1 / (2 sqrt(survivors))
  std::vector<double> values;   // sorted (y - S_n) / (sigma sqrt n) on survival
  double empirical_cdf(double t) const;
};

ConditionedLaw conditioned_cdf(const WalkKernel& kernel, Measure m, const Vec& x, double y, int n,
                               std::size_t reps, const RandomStream& rng);

struct ExitProbabilityRow {
  int n = 0;
  double y = 0.0;
  Estimate probability;
  Estimate scaled;  // sqrt(n) P / (1 + y)
};

std::vector<ExitProbabilityRow> exit_probability(const WalkKernel& kernel, Measure m, const Vec& x,
                                                 const std::vector<double>& ys, const std::vector<int>& ns,
                                                 std::size_t reps, const RandomStream& rng);

struct LocalProbabilityRow {
  int n = 0;
  double y = 0.0;
  double a = 0.0;
  double b = 0.0;
  Estimate probability;
  Estimate exit_probability;  // same paths, event superset
  Estimate scaled;            // n^{3/2} P / ((1+y)(b-a+1)(b+a+1))
  Estimate scaled_y;          // n^{3/2} P / (1+y)
};

std::vector<LocalProbabilityRow> local_probability(const WalkKernel& kernel, Measure m, const Vec& x,
                                                   const std::vector<double>& ys, const std::vector<int>& ns,
                                                   double a, double b, std::size_t reps, const RandomStream& rng);

// phi(x, y) = fx(x) * 1[y_lo <= y <= y_hi]
struct BoxFunction {
  std::function<double(const Vec&)> fx;
  double y_lo = 0.0;
  double y_hi = 1.0;
  double operator()(const Vec& x, double y) const { return (y >= y_lo && y <= y_hi) ? fx(x) : 0.0; }
};

struct DualityResult {
  int n = 0;
  Estimate lhs;
  Estimate rhs;
  double z = 0.0;
};

DualityResult verify_duality(const WalkKernel& kernel, int n, const BoxFunction& phi, const BoxFunction& psi,
                             std::size_t reps, const RandomStream& rng);

struct MartingaleReport {
  int n = 0;
  std::size_t reps = 0;
  double max_gap = 0.0;
  double theta_sup = 0.0;
  double bound = 0.0;  // 2 sup|theta|
  bool bound_ok = false;
  double max_identity_error = 0.0;
  double max_gap_first_half = 0.0;
  double max_gap_second_half = 0.0;
  Estimate martingale_increment_mean;
};

MartingaleReport martingale_gap(const WalkKernel& kernel, const CohomologicalSolution& theta, const Vec& x, int n,
                                std::size_t reps, const RandomStream& rng);

// h(x, u) = fx(x) * fu(u); fu supported in [u_lo, u_hi] (may be infinite).
struct SeparableFunction {
  std::function<double(const Vec&)> fx;
  std::function<double(double)> fu;
  double u_lo = -std::numeric_limits<double>::infinity();
  double u_hi = std::numeric_limits<double>::infinity();
};

struct LltRow {
  int n = 0;
  Estimate lhs;
  double rhs = 0.0;
  double error = 0.0;
};

std::vector<LltRow> llt_unconditioned(const WalkKernel& kernel, const Vec& x, double y, const std::vector<int>& ns,
                                      const SeparableFunction& h, std::size_t reps, const RandomStream& rng);

struct ChangeOfMeasureResult {
  int n = 0;
  Estimate lhs;  // plain-walk side
  Estimate rhs;  // changed-measure side
  double z = 0.0;
};

ChangeOfMeasureResult change_of_measure_check(const WalkKernel& kernel, const Vec& x, int n,
                                              const std::function<double(const Vec&, double)>& h, std::size_t reps,
                                              const RandomStream& rng);

}  // namespace matbrw
