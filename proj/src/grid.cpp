// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "matbrw/error.hpp"

namespace matbrw {

ProjectiveGrid ProjectiveGrid::make(int d, int size) {
  if (d < 1 || d > kMaxDim) fail(ErrorCode::InvalidArgument, "grid dimension must be in [1, 8]");
  ProjectiveGrid g;
  g.d_ = d;
  g.nodes_.clear();
  if (d == 1) {
    g.nodes_.push_back(Vec::Ones(1));
    return g;
  }
  if (d == 2 && size < 64) fail(ErrorCode::InvalidArgument, "d = 2 grids need K >= 64");
  if (size < d + 1) fail(ErrorCode::InvalidArgument, "grid too small");
  g.nodes_.reserve(static_cast<std::size_t>(size));
  if (d == 2) {
    for (int i = 0; i < size; ++i) {
      const double a = std::numbers::pi * i / size;
      Vec v(2);
      v << std::cos(a), std::sin(a);
      canonicalize(v);
      g.nodes_.push_back(v);
    }
  } else if (d == 3) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < size; ++i) {
      const double z = (i + 0.5) / size;
      const double r = std::sqrt(1.0 - z * z);
      Vec v(3);
      v << r * std::cos(golden * i), r * std::sin(golden * i), z;
      canonicalize(v);
      g.nodes_.push_back(v);
    }
  } else {
    RandomStream rng(0x5eed0000u + static_cast<unsigned>(d));
    for (int i = 0; i < size; ++i) {
      Vec v(d);
      for (int k = 0; k < d; ++k) v(k) = rng.normal();
      v /= v.norm();
      canonicalize(v);
      g.nodes_.push_back(v);
    }
  }
  return g;
}

Stencil ProjectiveGrid::locate(const Vec& x) const {
  Stencil st;
  const int k = size();
  if (d_ == 1) {
    st.size = 1;
    st.node[0] = 0;
    st.weight[0] = 1.0;
    return st;
  }
  if (d_ == 2) {
    double theta = std::atan2(x(1), x(0));
    if (theta < 0.0) theta += std::numbers::pi;
    if (theta >= std::numbers::pi) theta -= std::numbers::pi;
    const double p = theta * k / std::numbers::pi;
    const double fl = std::floor(p);
    const int i0 = static_cast<int>(fl) % k;
    const double w = p - fl;
    st.size = 2;
    st.node[0] = static_cast<std::uint32_t>(i0);
    st.node[1] = static_cast<std::uint32_t>((i0 + 1) % k);
    st.weight[0] = 1.0 - w;
    st.weight[1] = w;
    return st;
  }
  const int m = std::min(k, d_ + 1);
  std::array<std::pair<double, int>, kMaxStencil> best;
  int filled = 0;
  for (int i = 0; i < k; ++i) {
    const double c = std::min(1.0, std::abs(x.dot(nodes_[static_cast<std::size_t>(i)])));
    const double s2 = std::max(0.0, 1.0 - c * c);
    if (filled < m) {
      best[static_cast<std::size_t>(filled++)] = {s2, i};
      std::push_heap(best.begin(), best.begin() + filled);
    } else if (s2 < best[0].first) {
      std::pop_heap(best.begin(), best.begin() + m);
      best[static_cast<std::size_t>(m - 1)] = {s2, i};
      std::push_heap(best.begin(), best.begin() + m);
    }
  }
  std::sort(best.begin(), best.begin() + m);
  if (best[0].first < 1e-24) {
    st.size = 1;
    st.node[0] = static_cast<std::uint32_t>(best[0].second);
    st.weight[0] = 1.0;
    return st;
  }
  double total = 0.0;
  st.size = m;
  for (int j = 0; j < m; ++j) {
    st.node[static_cast<std::size_t>(j)] = static_cast<std::uint32_t>(best[static_cast<std::size_t>(j)].second);
    st.weight[static_cast<std::size_t>(j)] = 1.0 / best[static_cast<std::size_t>(j)].first;
    total += st.weight[static_cast<std::size_t>(j)];
  }
  for (int j = 0; j < m; ++j) st.weight[static_cast<std::size_t>(j)] /= total;
  return st;
}

Vec ProjectiveGrid::sample_uniform(RandomStream& rng) const {
  Vec v(d_);
  double n = 0.0;
  do {
    for (int k = 0; k < d_; ++k) v(k) = rng.normal();
    n = v.norm();
  } while (n == 0.0);
  v /= n;
  canonicalize(v);
  return v;
}

Vec ProjectiveGrid::sample_density(const std::vector<double>& values, RandomStream& rng) const {
  if (d_ == 1) return Vec::Ones(1);
  const int k = size();
  if (d_ == 2) {
    // Cell i spans [theta_i, theta_{i+1}); its mass is (f_i + f_{i+1}) / 2.
    double total = 0.0;
    for (int i = 0; i < k; ++i) total += values[static_cast<std::size_t>(i)] + values[static_cast<std::size_t>((i + 1) % k)];
    if (!(total > 0.0)) fail(ErrorCode::MissingDensity, "density vanishes on the grid");
    double u = rng.uniform() * total;
    int cell = k - 1;
    for (int i = 0; i < k; ++i) {
      const double m = values[static_cast<std::size_t>(i)] + values[static_cast<std::size_t>((i + 1) % k)];
      if (u < m) {
        cell = i;
        break;
      }
      u -= m;
    }
    const double a = values[static_cast<std::size_t>(cell)];
    const double b = values[static_cast<std::size_t>((cell + 1) % k)];
    // Inverse CDF of the density a + (b - a) w on [0, 1).
    const double v = rng.uniform();
    double w;
    if (std::abs(b - a) < 1e-12 * std::max(a, b)) {
      w = v;
    } else {
      w = (-a + std::sqrt(a * a + (b * b - a * a) * v)) / (b - a);
    }
    w = std::clamp(w, 0.0, 1.0);
    const double theta = std::numbers::pi * (cell + w) / k;
    Vec x(2);
    x << std::cos(theta), std::sin(theta);
    canonicalize(x);
    return x;
  }
  const double vmax = *std::max_element(values.begin(), values.end());
  if (!(vmax > 0.0)) fail(ErrorCode::MissingDensity, "density vanishes on the grid");
  for (int attempt = 0; attempt < 1000000; ++attempt) {
    Vec x = sample_uniform(rng);
    if (rng.uniform() * vmax < interpolate(values, x)) return x;
  }
  fail(ErrorCode::MissingDensity, "rejection sampling from the grid density failed");
}

}  // namespace matbrw
