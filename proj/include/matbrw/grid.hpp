// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "matbrw/group_action.hpp"
#include "matbrw/random.hpp"

namespace matbrw {

inline constexpr int kMaxStencil = kMaxDim + 1;

struct Stencil {
  int size = 0;
  std::array<std::uint32_t, kMaxStencil> node{};
  std::array<double, kMaxStencil> weight{};

  double apply(const std::vector<double>& values) const {
    double s = 0.0;
    for (int k = 0; k < size; ++k) s += weight[k] * values[node[k]];
    return s;
  }
};

// Discretization of projective space. d = 2: K equispaced angles in [0, pi)
// with linear interpolation. d = 3: Fibonacci points on the upper hemisphere.
// d >= 4: fixed-seed random points. d >= 3 interpolates from the d + 1 nearest
// nodes by inverse squared sine distance. d = 1: one node.
class ProjectiveGrid {
 public:
  ProjectiveGrid() : nodes_{Vec::Ones(1)} {}
  static ProjectiveGrid make(int d, int size);

  int dim() const noexcept { return d_; }
  int size() const noexcept { return static_cast<int>(nodes_.size()); }
  const Vec& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  // Node masses under the uniform measure on projective space.
  double cell_mass(int) const noexcept { return 1.0 / static_cast<double>(nodes_.size()); }

  Stencil locate(const Vec& x) const;
  double interpolate(const std::vector<double>& values, const Vec& x) const {
    return locate(x).apply(values);
  }

  // Uniform direction on projective space (canonical unit vector).
  Vec sample_uniform(RandomStream& rng) const;
  // Draw from the density (w.r.t. the uniform measure) that interpolates the
  // nonnegative node values. Exact for d <= 2; rejection for d >= 3.
  Vec sample_density(const std::vector<double>& values, RandomStream& rng) const;

 private:
  int d_ = 1;
  std::vector<Vec> nodes_;
};

}  // namespace matbrw
