// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "matbrw/group_action.hpp"
#include "matbrw/random.hpp"
#include "matbrw/stats.hpp"

namespace matbrw {

class OffspringLaw {
 public:
  enum class Kind { Explicit, Poisson, Geometric };

  // Binary branching.
  OffspringLaw() : p_{0.0, 0.0, 1.0} { finish(); }
  static OffspringLaw explicit_probabilities(std::vector<double> p);
  static OffspringLaw poisson(double mean);
  // Geometric on {0, 1, ...} with the given mean.
  static OffspringLaw geometric(double mean);

  Kind kind() const noexcept { return kind_; }
  double parameter() const noexcept { return parameter_; }
  double mean() const noexcept { return mean_; }
  double second_moment() const noexcept { return second_moment_; }
  const std::vector<double>& probabilities() const noexcept { return p_; }
  bool deterministic() const noexcept { return deterministic_; }

  unsigned sample(RandomStream& rng) const;

 private:
  void finish();
  Kind kind_ = Kind::Explicit;
  double parameter_ = 0.0;
  std::vector<double> p_;
  std::vector<double> cdf_;
  double mean_ = 0.0;
  double second_moment_ = 0.0;
  bool deterministic_ = false;
};

// Component laws. Entries in logs where a scale is meant.
struct ScalarLognormal {  // d = 1: g = exp(N(mean, sd^2))
  double mean = 0.0;
  double sd = 1.0;
};
struct Ginibre {  // i.i.d. N(0, scale^2) entries
  double scale = 1.0;
};
struct DiagRotation {  // d = 2: R(phi) diag(e^xi1, e^xi2) R(psi), angles ~ N(0, angle_sd^2)
  double log_mean1 = 0.5;
  double log_mean2 = -0.5;
  double log_sd = 0.5;
  double angle_sd = 0.6;
};
// Fixtures without a density.
struct ScalarTwoAtom {  // d = 1: g = e^{log_a} w.p. p_a, else e^{log_b}
  double log_a = 1.0;
  double log_b = -1.0;
  double p_a = 0.5;
};
struct ScalarConstant {  // g = e^{log_c} I
  double log_c = 0.0;
};
struct Orthogonal {};  // Haar on O(d)

using LawComponent =
    std::variant<ScalarLognormal, Ginibre, DiagRotation, ScalarTwoAtom, ScalarConstant, Orthogonal>;

struct WeightedComponent {
  double weight = 1.0;
  LawComponent law;
};

std::string component_name(const LawComponent& c);

class TiltedSampler;

class MatrixLaw {
 public:
  MatrixLaw() : MatrixLaw(1, {{1.0, ScalarLognormal{}}}) {}
  MatrixLaw(int d, std::vector<WeightedComponent> components, double tilt = 0.0);
  MatrixLaw(int d, LawComponent single, double tilt = 0.0)
      : MatrixLaw(d, std::vector<WeightedComponent>{{1.0, std::move(single)}}, tilt) {}

  int dim() const noexcept { return d_; }
  double tilt() const noexcept { return tilt_; }
  const std::vector<WeightedComponent>& components() const noexcept { return components_; }
  MatrixLaw with_tilt(double t) const;

  bool has_density() const noexcept;
  // Invariant under g -> k g k' for orthogonal k, k'. Such laws give an
  // x-independent norm distribution and admit exact tilted sampling.
  bool invariant() const noexcept;

  // One draw with the tilt applied. Near-singular draws are redrawn and
  // counted in *resamples when given.
  Mat sample(RandomStream& rng, int* resamples = nullptr) const;
  // Same law, with the principal scalar variate driven by the uniform u. Pool
  // builders pass stratified u to reduce variance.
  Mat sample_with_uniform(double u, RandomStream& rng, int* resamples = nullptr) const;

  // log of the x-independent integral of ||g v||^s (tilt included). Only for
  // invariant laws; computed by one-dimensional adaptive quadrature.
  double log_mass(double s) const;
  // Open interval of s where log_mass is finite.
  std::pair<double, double> mass_domain() const;

  TiltedSampler tilted_sampler(double s) const;

 private:
  Mat sample_component(const LawComponent& c, double u, bool use_u, RandomStream& rng) const;
  int d_;
  std::vector<WeightedComponent> components_;
  std::vector<double> cumulative_;
  double tilt_;
};

// Exact sampler for the law proportional to ||g x||^s mu(dg) at a given x.
class TiltedSampler {
 public:
  Mat sample(const Vec& x, RandomStream& rng) const;
  double s() const noexcept { return s_; }
  double log_mass() const noexcept { return log_mass_; }

 private:
  friend class MatrixLaw;
  MatrixLaw law_;
  double s_ = 0.0;
  double log_mass_ = 0.0;
  std::vector<double> cumulative_;
  // Per-component atom probabilities for two-atom laws.
  std::vector<double> atom_a_;
};

struct BranchingModel {
  OffspringLaw offspring;
  MatrixLaw matrices;
  int dim() const noexcept { return matrices.dim(); }
  BranchingModel with_tilt(double t) const { return {offspring, matrices.with_tilt(t)}; }
};

struct NodeSample {
  unsigned count = 0;
  std::vector<Matrix> matrices;
  int resamples = 0;
};

NodeSample sample_node(const BranchingModel& model, RandomStream& rng);

struct MomentCheck {
  std::vector<std::size_t> pool_sizes;
  std::vector<Estimate> estimates;
  bool finite = false;
  bool stable = false;
};

struct AdmissibilityReport {
  double mean_offspring = 0.0;
  double offspring_second_moment = 0.0;  // E N^{1+delta}, delta = 1
  bool a1_pass = false;
  double eta0 = 0.0;
  MomentCheck a2;
  bool density_pass = false;
  // Largest ladder level c with min over the x grid of mu{sigma(g,x) > c}
  // bounded away from 0 at three standard errors; 0 if none.
  double c0 = 0.0;
  double c0_probability = 0.0;
  bool c0_pass = false;
  std::vector<std::string> notes;
  bool pass() const noexcept { return a1_pass && a2.finite && a2.stable && density_pass && c0_pass; }
};

AdmissibilityReport admissibility_report(const BranchingModel& model, std::size_t pool_size,
                                         double eta0, std::uint64_t seed = 1);

// Reads [model] from a TOML file. See docs/experiments.md for the keys.
BranchingModel load_model_file(const std::string& path);

}  // namespace matbrw
