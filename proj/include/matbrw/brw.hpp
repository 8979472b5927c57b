// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "matbrw/model.hpp"
#include "matbrw/random.hpp"
#include "matbrw/spectral.hpp"
#include "matbrw/stats.hpp"
#include "matbrw/walk.hpp"

namespace matbrw {

class DirectionSet {
 public:
  enum class Kind { Full, AngleInterval, Cap };

  DirectionSet() = default;
  static DirectionSet full();
  // Directions at angle in [theta1, theta2) within [0, pi); d = 2 only.
  static DirectionSet angle_interval(double theta1, double theta2);
  // Lines within sine-distance < radius of center; d >= 2.
  static DirectionSet cap(const ProjPoint& center, double radius);

  Kind kind() const noexcept { return kind_; }
  bool contains(const Vec& x) const;
  // nu mass from the spectral grid weights.
  double nu_mass(const SpectralData& data) const;
  std::string describe() const;

 private:
  Kind kind_ = Kind::Full;
  double a_ = 0.0;
  double b_ = 0.0;
  ProjPoint center_;
};

// Angle of a d = 2 direction in [0, pi).
double projective_angle(const Vec& x);

// One generation in structure-of-arrays form. Particle i descends from
// parent[i] of the previous generation as its child_rank[i]-th child.
struct GenerationRecord {
  int generation = 0;
  int dim = 1;
  std::vector<std::uint32_t> parent;
  std::vector<std::uint32_t> child_rank;
  std::vector<double> position;   // S_u^x
  std::vector<double> direction;  // X_u^x, row-major, dim entries per particle
  bool has_variants = false;
  std::vector<double> log_coeff;  // log |<f, G_u v>|
  std::vector<double> log_vector_norm;  // log ||G_u v||
  std::vector<double> log_norm;   // log ||G_u||
  std::vector<double> log_specrad;

  std::size_t size() const noexcept { return position.size(); }
  bool survived() const noexcept { return !position.empty(); }
  Vec direction_at(std::size_t i) const;
};

struct SimulationOptions {
  Vec x = Vec::Ones(1);
  int n_max = 10;
  std::size_t population_cap = 2000000;
  bool track_variants = false;
  Vec f;  // coefficient covector, defaults to e_1
  Vec v;  // coefficient vector, defaults to e_1
  // Throw PopulationCapExceeded instead of returning partial records.
  bool strict = false;
};

enum class SimulationStatus { Completed, Extinct, CapExceeded };
std::string to_string(SimulationStatus s);

struct SimulationResult {
  SimulationStatus status = SimulationStatus::Completed;
  int last_generation = 0;  // last complete generation
  int offending_generation = 0;
  std::uint64_t root_key = 0;
  std::vector<GenerationRecord> generations;  // generation 0 is the root
  bool survived() const noexcept { return status != SimulationStatus::Extinct; }
};

// Children of parent p in generation n draw from root.child(n).child(p), so
// the result does not depend on the worker count.
SimulationResult simulate(const BranchingModel& model, const SimulationOptions& options, const RandomStream& rng);

// Ulam-Harris label (child index at each generation) of particle i at generation n.
std::vector<std::uint32_t> ulam_harris(const SimulationResult& result, int n, std::size_t i);

// Redraws the matrix attached to particle i of generation n and returns the
// largest |S_child - S_parent - sigma(g, X_parent)| over `samples` random picks.
double cocycle_spot_check(const BranchingModel& model, const SimulationResult& result, std::size_t samples,
                          RandomStream& rng);

struct ExtremalSeries {
  std::vector<int> n;
  std::vector<std::size_t> population;
  std::vector<std::size_t> hits;
  std::vector<double> max;  // -inf when no particle is in A
  std::vector<double> min;  // +inf when no particle is in A
  std::vector<double> max_over_n() const;
  std::vector<double> max_over_log_n() const;  // n >= 2 entries; n = 1 gives NaN
  std::vector<double> min_over_n() const;
  std::vector<double> min_over_log_n() const;
};

ExtremalSeries extremal(const SimulationResult& result, const DirectionSet& a);

struct VariantSeries {
  ExtremalSeries coeff;
  ExtremalSeries vector_norm;
  ExtremalSeries opnorm;
  ExtremalSeries specrad;
  // Per generation: max coeff <= max ||G v|| <= max ||G|| and max rho <= max ||G||.
  std::vector<bool> ordered;
  bool all_ordered() const;
};

VariantSeries variant_extremal(const SimulationResult& result, const DirectionSet& a);

struct ManyToOneResult {
  int n = 0;
  double s = 0.0;
  Estimate lhs;  // tree side
  Estimate rhs;  // spine side
  double z = 0.0;
};

// Uses the kernel's tilted law for both sides.
ManyToOneResult many_to_one_check(const BranchingModel& model, const WalkKernel& kernel, const Vec& x, int n,
                                  const std::function<double(const Vec&, double)>& h, std::size_t tree_reps,
                                  std::size_t walk_reps, const RandomStream& rng);

struct FirstMomentOptions {
  int sign = 1;  // +1 maximal position, -1 minimal (mirrored)
  double epsilon = 0.3;
  // Barrier on sign * S_k for k <= n; +inf disables it.
  double barrier = std::numeric_limits<double>::infinity();
  // When set, replaces (-3/(2|s|) + epsilon) log n; -inf counts every particle.
  bool fixed_threshold = false;
  double threshold = -std::numeric_limits<double>::infinity();
};

struct FirstMomentRow {
  int n = 0;
  double threshold = 0.0;
  double barrier = 0.0;
  Estimate expected_count;
};

// E #{|u| = n : sign S_u >= threshold, sign S_{u|k} <= barrier for k <= n}
// through the spine walk, for a kernel at a calibrated boundary point.
std::vector<FirstMomentRow> first_moment_tail(const WalkKernel& kernel, double mean_offspring, const Vec& x,
                                              const std::vector<int>& ns, const FirstMomentOptions& options,
                                              std::size_t reps, const RandomStream& rng);

// CSV: n,population,hits,M_n,m_n and, with variants, the four maxima.
void write_generation_csv(std::ostream& out, const SimulationResult& result, const DirectionSet& a);

// Binary dump: little-endian, header "MATBRWGN", u32 version = 1, u32 dim,
// u32 flags (bit 0 variants), u32 generation count; then per generation u32 n,
// u64 size, parent u32[size], child_rank u32[size], position f64[size],
// direction f64[size*dim] and, with variants, four f64[size] arrays.
void write_generations(const std::string& path, const SimulationResult& result);
std::vector<GenerationRecord> read_generations(const std::string& path);

}  // namespace matbrw
