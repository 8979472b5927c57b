// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

namespace matbrw {

// Welford accumulator; merge() is exact up to rounding and order-stable when
// partials are combined in a fixed order.
class RunningStats {
 public:
  void add(double x) noexcept {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  void merge(const RunningStats& o) noexcept;

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return n_ ? mean_ : std::numeric_limits<double>::quiet_NaN(); }
  double variance() const noexcept;
  double stderr_mean() const noexcept;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

Estimate to_estimate(const RunningStats& s);

// (a - b) / sqrt(se_a^2 + se_b^2); returns 0 for two exact equal values.
double z_score(const Estimate& a, const Estimate& b);

double normal_cdf(double x);
double normal_pdf(double x);
double rayleigh_cdf(double t);
double rayleigh_pdf(double t);

// Sup distance between the empirical CDF of `values` and `cdf`. Sorts the input.
double ks_distance(std::vector<double>& values, const std::function<double(double)>& cdf);

}  // namespace matbrw
