// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/walk.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "matbrw/error.hpp"
#include "matbrw/parallel.hpp"

namespace matbrw {
namespace {

constexpr std::size_t kGrain = 512;
constexpr int kMaxAttempts = 1000000;
constexpr double kMinEss = 10.0;

void require_nondegenerate(const WalkKernel& k) {
  if (k.spectral().degenerate)
    fail(ErrorCode::InvalidArgument, "degenerate asymptotic variance blocks conditioned-law computations");
}

template <class Acc, class Body>
Acc reduce_paths(std::size_t reps, Body&& body) {
  std::vector<Acc> parts = map_chunks<Acc>(reps, kGrain, [&](std::size_t b, std::size_t e) {
    Acc acc;
    for (std::size_t i = b; i < e; ++i) body(i, acc);
    return acc;
  });
  Acc total;
  for (auto& p : parts) total.merge(p);
  return total;
}

struct StatsVec {
  std::vector<RunningStats> v;
  void ensure(std::size_t n) {
    if (v.size() < n) v.resize(n);
  }
  void merge(const StatsVec& o) {
    ensure(o.v.size());
    for (std::size_t i = 0; i < o.v.size(); ++i) v[i].merge(o.v[i]);
  }
};

}  // namespace

std::string to_string(Measure m) {
  switch (m) {
    case Measure::Plain: return "P";
    case Measure::Changed: return "Q_s";
    case Measure::Dual: return "Q_s_dual";
  }
  return "?";
}

std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::Automatic: return "auto";
    case SamplerKind::Exact: return "exact";
    case SamplerKind::Resample: return "resample";
  }
  return "?";
}

// ---------------------------------------------------------------- kernel

WalkKernel::WalkKernel(const BranchingModel& model, SpectralData data, WalkConfig config)
    : data_(std::move(data)), law_(model.matrices.with_tilt(data_.tilt)), config_(config) {
  if (law_.dim() != data_.grid.dim()) fail(ErrorCode::InvalidArgument, "model and spectral data dimensions differ");
  if (config_.candidates < 1) fail(ErrorCode::InvalidArgument, "candidate pool size must be positive");
  sampler_ = config_.sampler;
  if (sampler_ == SamplerKind::Automatic) sampler_ = law_.invariant() ? SamplerKind::Exact : SamplerKind::Resample;
  if (sampler_ == SamplerKind::Exact) {
    tilted_ = law_.tilted_sampler(data_.s);
    log_mass_ = tilted_->log_mass();
  }
  pi_dot_ = data_.pi_density();
  r_max_ = *std::max_element(data_.r.begin(), data_.r.end());
  dual_ratio_max_ = 0.0;
  for (std::size_t i = 0; i < pi_dot_.size(); ++i) dual_ratio_max_ = std::max(dual_ratio_max_, pi_dot_[i] / data_.r[i]);
}

WalkStep WalkKernel::step(Measure m, const Vec& x, RandomStream& rng) const {
  switch (m) {
    case Measure::Plain: return step_plain(x, rng);
    case Measure::Changed: return step_changed(x, rng);
    case Measure::Dual: return step_dual(x, rng);
  }
  return step_plain(x, rng);
}

WalkStep WalkKernel::step_plain(const Vec& x, RandomStream& rng) const {
  WalkStep out;
  out.g = law_.sample(rng);
  out.x = x;
  out.increment = move_direction(out.g, out.x);
  out.weight_diag = 1.0;
  return out;
}

WalkStep WalkKernel::step_changed(const Vec& x, RandomStream& rng) const {
  return sampler_ == SamplerKind::Exact ? changed_exact(x, rng) : changed_resample(x, rng);
}

WalkStep WalkKernel::step_dual(const Vec& x, RandomStream& rng) const {
  return sampler_ == SamplerKind::Exact ? dual_exact(x, rng) : dual_resample(x, rng);
}

WalkStep WalkKernel::changed_exact(const Vec& x, RandomStream& rng) const {
  WalkStep out;
  const double rx = r(x);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Mat g = tilted_->sample(x, rng);
    Vec y = x;
    const double inc = move_direction(g, y);
    const double ry = r(y);
    if (attempt == 0) out.weight_diag = std::exp(log_mass_ - data_.lambda) * ry / rx;
    if (rng.uniform() * r_max_ < ry) {
      out.g = std::move(g);
      out.x = std::move(y);
      out.increment = inc;
      return out;
    }
  }
  fail(ErrorCode::DegenerateWeights, "rejection sampler for the changed measure does not accept");
}

WalkStep WalkKernel::dual_exact(const Vec& z, RandomStream& rng) const {
  // Reversal of the stationary changed-measure chain: draw X_0 = u uniform and
  // h tilted at u, then rotate so that h u points at z. The dual matrix is the
  // inverse of the rotated h and sends z back to u.
  WalkStep out;
  const int d = dim();
  const double pz = pi_density(z);
  if (!(pz > 0.0)) fail(ErrorCode::MissingDensity, "stationary density vanishes at the current direction");
  const double base = r(z) / pz;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const Vec u = data_.grid.sample_uniform(rng);
    Mat h = tilted_->sample(u, rng);
    Vec w = h * u;
    const double nw = w.norm();
    w /= nw;
    Vec target = z;
    if (w.dot(target) < 0.0) target = -target;
    Vec v = w - target;
    const double vn2 = v.squaredNorm();
    Mat rh = h;
    if (vn2 > 1e-30) rh = (Mat::Identity(d, d) - (2.0 / vn2) * v * v.transpose()) * h;
    const double ratio = pi_density(u) / r(u);
    if (attempt == 0) out.weight_diag = ratio * base;
    if (rng.uniform() * dual_ratio_max_ < ratio) {
      out.g = rh.inverse();
      out.x = u;
      out.increment = -std::log(nw);
      return out;
    }
  }
  fail(ErrorCode::DegenerateWeights, "rejection sampler for the dual measure does not accept");
}

namespace {
struct CandidateBuffers {
  std::vector<Mat> g;
  std::vector<Vec> y;
  std::vector<double> inc;
  std::vector<double> lw;
  void resize(int w) {
    const auto n = static_cast<std::size_t>(w);
    if (g.size() < n) {
      g.resize(n);
      y.resize(n);
      inc.resize(n);
      lw.resize(n);
    }
  }
};
thread_local CandidateBuffers t_buf;

// Picks an index with probability exp(lw) / sum; returns log(mean exp(lw)).
double select(const std::vector<double>& lw, int w, RandomStream& rng, int& chosen) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < w; ++j) mx = std::max(mx, lw[static_cast<std::size_t>(j)]);
  if (!std::isfinite(mx)) fail(ErrorCode::DegenerateWeights, "all candidate weights vanish");
  double sum = 0.0, sum2 = 0.0;
  for (int j = 0; j < w; ++j) {
    const double e = std::exp(lw[static_cast<std::size_t>(j)] - mx);
    sum += e;
    sum2 += e * e;
  }
  const double ess = sum * sum / sum2;
  if (ess < kMinEss && w >= kMinEss) fail(ErrorCode::DegenerateWeights, "effective sample size below 10");
  double u = rng.uniform() * sum;
  chosen = w - 1;
  for (int j = 0; j < w; ++j) {
    u -= std::exp(lw[static_cast<std::size_t>(j)] - mx);
    if (u < 0.0) {
      chosen = j;
      break;
    }
  }
  return mx + std::log(sum / static_cast<double>(w));
}
}  // namespace

WalkStep WalkKernel::changed_resample(const Vec& x, RandomStream& rng) const {
  const int w = config_.candidates;
  auto& b = t_buf;
  b.resize(w);
  for (int j = 0; j < w; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    b.g[jj] = law_.sample(rng);
    b.y[jj] = x;
    b.inc[jj] = move_direction(b.g[jj], b.y[jj]);
    b.lw[jj] = data_.s * b.inc[jj] + std::log(r(b.y[jj]));
  }
  int k = 0;
  const double log_mean = select(b.lw, w, rng, k);
  WalkStep out;
  const auto kk = static_cast<std::size_t>(k);
  out.g = b.g[kk];
  out.x = b.y[kk];
  out.increment = b.inc[kk];
  out.weight_diag = std::exp(log_mean - data_.lambda) / r(x);
  return out;
}

WalkStep WalkKernel::dual_resample(const Vec& z, RandomStream& rng) const {
  const int w = config_.candidates;
  const double d = static_cast<double>(dim());
  const double pz = pi_density(z);
  if (!(pz > 0.0)) fail(ErrorCode::MissingDensity, "stationary density vanishes at the current direction");
  auto& b = t_buf;
  b.resize(w);
  for (int j = 0; j < w; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    b.g[jj] = law_.sample(rng).inverse();
    b.y[jj] = z;
    b.inc[jj] = move_direction(b.g[jj], b.y[jj]);
    const double py = pi_density(b.y[jj]);
    b.lw[jj] = py > 0.0 ? -(data_.s + d) * b.inc[jj] + log_abs_det(b.g[jj]) - std::log(r(b.y[jj])) + std::log(py)
                        : -std::numeric_limits<double>::infinity();
  }
  int k = 0;
  const double log_mean = select(b.lw, w, rng, k);
  WalkStep out;
  const auto kk = static_cast<std::size_t>(k);
  out.g = b.g[kk];
  out.x = b.y[kk];
  out.increment = b.inc[kk];
  out.weight_diag = std::exp(log_mean - data_.lambda) * r(z) / pz;
  return out;
}

Vec WalkKernel::sample_stationary(RandomStream& rng) const { return data_.grid.sample_density(pi_dot_, rng); }

// ---------------------------------------------------------------- paths

WalkPath sample_path(const WalkKernel& kernel, Measure m, const Vec& x0, int n, const RandomStream& rng,
                     bool keep_matrices) {
  if (n < 0) fail(ErrorCode::InvalidArgument, "path length must be >= 0");
  WalkPath p;
  p.measure = m;
  Vec x = x0;
  x /= x.norm();
  canonicalize(x);
  p.start = x;
  p.x.reserve(static_cast<std::size_t>(n) + 1);
  p.s.reserve(static_cast<std::size_t>(n) + 1);
  p.x.push_back(x);
  p.s.push_back(0.0);
  double s = 0.0;
  for (int k = 1; k <= n; ++k) {
    RandomStream sr = rng.child(static_cast<std::uint64_t>(k));
    WalkStep st = kernel.step(m, x, sr);
    s += st.increment;
    x = st.x;
    p.x.push_back(x);
    p.s.push_back(s);
    p.weight_diag.push_back(st.weight_diag);
    if (keep_matrices) p.matrices.push_back(st.g);
  }
  return p;
}

ExitStats exit_time(const WalkPath& path, double y) {
  if (!(y >= 0.0)) fail(ErrorCode::InvalidArgument, "exit level y must be >= 0");
  ExitStats e;
  e.y = y;
  e.horizon = path.length();
  for (int k = 1; k <= path.length(); ++k) {
    const double sk = path.s[static_cast<std::size_t>(k)];
    if (!e.tau && y - sk < 0.0) e.tau = k;
    if (!e.tau_tilde && y + sk < 0.0) e.tau_tilde = k;
    if (e.tau && e.tau_tilde) break;
  }
  return e;
}

// ---------------------------------------------------------------- harmonic function

HarmonicEstimate harmonic_V(const WalkKernel& kernel, Measure m, const Vec& x, double y, int horizon,
                            std::size_t reps, const RandomStream& rng, bool require_plateau) {
  if (horizon < 8) fail(ErrorCode::InvalidArgument, "horizon must be >= 8");
  if (!(y >= 0.0)) fail(ErrorCode::InvalidArgument, "y must be >= 0");
  if (m == Measure::Plain) fail(ErrorCode::InvalidArgument, "harmonic function is defined under Q_s or its dual");
  require_nondegenerate(kernel);
  HarmonicEstimate out;
  out.x = x;
  out.y = y;
  out.measure = m;
  out.ns = {horizon / 8, horizon / 4, horizon / 2, horizon};
  const int q = horizon / 4;
  // Slots: 0..3 the four estimates, 4 Richardson at (n, n/4), 5 at (n+1, n/4+1), 6 their difference.
  const StatsVec acc = reduce_paths<StatsVec>(reps, [&](std::size_t i, StatsVec& a) {
    a.ensure(7);
    const RandomStream pr = rng.child(i);
    Vec cur = x;
    double s = 0.0;
    double z[4] = {0, 0, 0, 0};
    double zq1 = 0.0, zn1 = 0.0;
    for (int k = 1; k <= horizon + 1; ++k) {
      RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
      const WalkStep st = kernel.step(m, cur, sr);
      s += st.increment;
      cur = st.x;
      if (y - s < 0.0) break;
      const double v = y - s;
      for (int j = 0; j < 4; ++j)
        if (k == out.ns[static_cast<std::size_t>(j)]) z[j] = v;
      if (k == q + 1) zq1 = v;
      if (k == horizon + 1) zn1 = v;
    }
    for (int j = 0; j < 4; ++j) a.v[static_cast<std::size_t>(j)].add(z[j]);
    const double r0 = 2.0 * z[3] - z[1];
    const double r1 = 2.0 * zn1 - zq1;
    a.v[4].add(r0);
    a.v[5].add(r1);
    a.v[6].add(r1 - r0);
  });
  for (int j = 0; j < 4; ++j) out.estimates.push_back(to_estimate(acc.v[static_cast<std::size_t>(j)]));
  out.limit = to_estimate(acc.v[4]);
  out.plateau = true;
  for (int j = 0; j < 3; ++j) {
    const auto& e1 = out.estimates[static_cast<std::size_t>(j)];
    const auto& e2 = out.estimates[static_cast<std::size_t>(j + 1)];
    if (std::abs(e2.value - e1.value) > 3.0 * std::hypot(e1.se, e2.se)) out.plateau = false;
  }
  const double dse = acc.v[6].stderr_mean();
  out.harmonicity_z = dse > 0.0 ? acc.v[6].mean() / dse : 0.0;
  if (require_plateau && !out.plateau) fail(ErrorCode::NoPlateau, "estimates still drift across doublings of n");
  return out;
}

// ---------------------------------------------------------------- conditioned law

double ConditionedLaw::empirical_cdf(double t) const {
  if (values.empty()) return 0.0;
  return static_cast<double>(std::upper_bound(values.begin(), values.end(), t) - values.begin()) /
         static_cast<double>(values.size());
}

ConditionedLaw conditioned_cdf(const WalkKernel& kernel, Measure m, const Vec& x, double y, int n, std::size_t reps,
                               const RandomStream& rng) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "n must be >= 1");
  if (!(y >= 0.0)) fail(ErrorCode::InvalidArgument, "y must be >= 0");
  require_nondegenerate(kernel);
  const double scale = kernel.sigma() * std::sqrt(static_cast<double>(n));
  struct Acc {
    std::vector<double> v;
    void merge(const Acc& o) { v.insert(v.end(), o.v.begin(), o.v.end()); }
  };
  const Acc acc = reduce_paths<Acc>(reps, [&](std::size_t i, Acc& a) {
    const RandomStream pr = rng.child(i);
    Vec cur = x;
    double s = 0.0;
    for (int k = 1; k <= n; ++k) {
      RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
      const WalkStep st = kernel.step(m, cur, sr);
      s += st.increment;
      cur = st.x;
      if (y - s < 0.0) return;
    }
    a.v.push_back((y - s) / scale);
  });
  ConditionedLaw out;
  out.n = n;
  out.y = y;
  out.trials = reps;
  out.survivors = acc.v.size();
  if (out.survivors < 1000)
    fail(ErrorCode::TooFewSurvivors, std::to_string(out.survivors) + " conditioned paths, need 1000");
  out.values = acc.v;
  out.ks = ks_distance(out.values, rayleigh_cdf);
  out.ks_uncertainty = 0.5 / std::sqrt(static_cast<double>(out.survivors));
  return out;
}

// ---------------------------------------------------------------- exit and local probabilities

std::vector<ExitProbabilityRow> exit_probability(const WalkKernel& kernel, Measure m, const Vec& x,
                                                 const std::vector<double>& ys, const std::vector<int>& ns,
                                                 std::size_t reps, const RandomStream& rng) {
  if (ns.empty() || ys.empty()) return {};
  for (double y : ys)
    if (!(y >= 0.0)) fail(ErrorCode::InvalidArgument, "y must be >= 0");
  const int nmax = *std::max_element(ns.begin(), ns.end());
  const double ymax = *std::max_element(ys.begin(), ys.end());
  const std::size_t cells = ns.size() * ys.size();
  const StatsVec acc = reduce_paths<StatsVec>(reps, [&](std::size_t i, StatsVec& a) {
    a.ensure(cells);
    const RandomStream pr = rng.child(i);
    Vec cur = x;
    double s = 0.0, smax = -std::numeric_limits<double>::infinity();
    std::vector<double> max_at(ns.size(), std::numeric_limits<double>::infinity());
    for (int k = 1; k <= nmax; ++k) {
      RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
      const WalkStep st = kernel.step(m, cur, sr);
      s += st.increment;
      cur = st.x;
      smax = std::max(smax, s);
      for (std::size_t j = 0; j < ns.size(); ++j)
        if (ns[j] == k) max_at[j] = smax;
      if (smax > ymax) break;
    }
    for (std::size_t j = 0; j < ns.size(); ++j)
      for (std::size_t l = 0; l < ys.size(); ++l) a.v[j * ys.size() + l].add(max_at[j] <= ys[l] ? 1.0 : 0.0);
  });
  std::vector<ExitProbabilityRow> rows;
  for (std::size_t j = 0; j < ns.size(); ++j) {
    for (std::size_t l = 0; l < ys.size(); ++l) {
      ExitProbabilityRow row;
      row.n = ns[j];
      row.y = ys[l];
      row.probability = to_estimate(acc.v[j * ys.size() + l]);
      const double f = std::sqrt(static_cast<double>(ns[j])) / (1.0 + ys[l]);
      row.scaled = {row.probability.value * f, row.probability.se * f};
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<LocalProbabilityRow> local_probability(const WalkKernel& kernel, Measure m, const Vec& x,
                                                   const std::vector<double>& ys, const std::vector<int>& ns,
                                                   double a_lo, double b_hi, std::size_t reps,
                                                   const RandomStream& rng) {
  if (!(a_lo >= 0.0) || b_hi < a_lo) fail(ErrorCode::InvalidArgument, "need 0 <= a <= b");
  if (ns.empty() || ys.empty()) return {};
  const int nmax = *std::max_element(ns.begin(), ns.end());
  const double ymax = *std::max_element(ys.begin(), ys.end());
  const std::size_t cells = ns.size() * ys.size();
  const StatsVec acc = reduce_paths<StatsVec>(reps, [&](std::size_t i, StatsVec& a) {
    a.ensure(2 * cells);
    const RandomStream pr = rng.child(i);
    Vec cur = x;
    double s = 0.0, smax = -std::numeric_limits<double>::infinity();
    std::vector<double> max_at(ns.size(), std::numeric_limits<double>::infinity());
    std::vector<double> s_at(ns.size(), 0.0);
    for (int k = 1; k <= nmax; ++k) {
      RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
      const WalkStep st = kernel.step(m, cur, sr);
      s += st.increment;
      cur = st.x;
      smax = std::max(smax, s);
      for (std::size_t j = 0; j < ns.size(); ++j)
        if (ns[j] == k) {
          max_at[j] = smax;
          s_at[j] = s;
        }
      if (smax > ymax) break;
    }
    for (std::size_t j = 0; j < ns.size(); ++j)
      for (std::size_t l = 0; l < ys.size(); ++l) {
        const bool alive = max_at[j] <= ys[l];
        const double v = ys[l] - s_at[j];
        const bool inside = alive && v >= a_lo && v <= b_hi && b_hi > a_lo;
        a.v[j * ys.size() + l].add(inside ? 1.0 : 0.0);
        a.v[cells + j * ys.size() + l].add(alive ? 1.0 : 0.0);
      }
  });
  std::vector<LocalProbabilityRow> rows;
  for (std::size_t j = 0; j < ns.size(); ++j) {
    for (std::size_t l = 0; l < ys.size(); ++l) {
      LocalProbabilityRow row;
      row.n = ns[j];
      row.y = ys[l];
      row.a = a_lo;
      row.b = b_hi;
      row.probability = to_estimate(acc.v[j * ys.size() + l]);
      row.exit_probability = to_estimate(acc.v[cells + j * ys.size() + l]);
      const double n32 = std::pow(static_cast<double>(ns[j]), 1.5);
      const double f = n32 / ((1.0 + ys[l]) * (b_hi - a_lo + 1.0) * (b_hi + a_lo + 1.0));
      row.scaled = {row.probability.value * f, row.probability.se * f};
      const double fy = n32 / (1.0 + ys[l]);
      row.scaled_y = {row.probability.value * fy, row.probability.se * fy};
      rows.push_back(row);
    }
  }
  return rows;
}

// ---------------------------------------------------------------- duality

DualityResult verify_duality(const WalkKernel& kernel, int n, const BoxFunction& phi, const BoxFunction& psi,
                             std::size_t reps, const RandomStream& rng) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "duality check needs n >= 1");
  auto side = [&](Measure m, const BoxFunction& outer, const BoxFunction& inner, const RandomStream& root) {
    const double width = outer.y_hi - outer.y_lo;
    const StatsVec acc = reduce_paths<StatsVec>(reps, [&](std::size_t i, StatsVec& a) {
      a.ensure(1);
      const RandomStream pr = root.child(i);
      RandomStream r0 = pr.child(0);
      Vec cur = kernel.sample_stationary(r0);
      const double y = outer.y_lo + width * r0.uniform();
      const double w = width * outer.fx(cur);
      if (w == 0.0) {
        a.v[0].add(0.0);
        return;
      }
      double s = 0.0;
      for (int k = 1; k <= n; ++k) {
        RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
        const WalkStep st = kernel.step(m, cur, sr);
        s += st.increment;
        cur = st.x;
        if (y - s < 0.0) {
          a.v[0].add(0.0);
          return;
        }
      }
      a.v[0].add(w * inner(cur, y - s));
    });
    return to_estimate(acc.v[0]);
  };
  DualityResult out;
  out.n = n;
  out.lhs = side(Measure::Changed, phi, psi, rng.child(0));
  out.rhs = side(Measure::Dual, psi, phi, rng.child(1));
  out.z = z_score(out.lhs, out.rhs);
  return out;
}

// ---------------------------------------------------------------- martingale approximation

MartingaleReport martingale_gap(const WalkKernel& kernel, const CohomologicalSolution& sol, const Vec& x, int n,
                                std::size_t reps, const RandomStream& rng) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "n must be >= 1");
  const ProjectiveGrid& grid = kernel.spectral().grid;
  if (sol.theta.size() != static_cast<std::size_t>(grid.size()))
    fail(ErrorCode::InvalidArgument, "theta does not live on the spectral grid");
  struct Acc {
    double max_gap = 0.0, first = 0.0, second = 0.0, ident = 0.0;
    RunningStats inc;
    void merge(const Acc& o) {
      max_gap = std::max(max_gap, o.max_gap);
      first = std::max(first, o.first);
      second = std::max(second, o.second);
      ident = std::max(ident, o.ident);
      inc.merge(o.inc);
    }
  };
  const Acc acc = reduce_paths<Acc>(reps, [&](std::size_t i, Acc& a) {
    const RandomStream pr = rng.child(i);
    Vec cur = x;
    const double theta0 = grid.interpolate(sol.theta, cur);
    double theta_prev = theta0;
    double s = 0.0, mart = 0.0;
    for (int k = 1; k <= n; ++k) {
      RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
      const WalkStep st = kernel.step_changed(cur, sr);
      cur = st.x;
      const double theta_next = grid.interpolate(sol.theta, cur);
      const double sigma0 = st.increment - theta_prev + theta_next;
      s += st.increment;
      mart += sigma0;
      a.inc.add(sigma0);
      const double gap = std::abs(s - mart);
      a.ident = std::max(a.ident, std::abs(gap - std::abs(theta0 - theta_next)));
      a.max_gap = std::max(a.max_gap, gap);
      if (2 * k <= n) a.first = std::max(a.first, gap);
      else a.second = std::max(a.second, gap);
      theta_prev = theta_next;
    }
  });
  MartingaleReport rep;
  rep.n = n;
  rep.reps = reps;
  rep.max_gap = acc.max_gap;
  rep.theta_sup = sol.sup_norm();
  rep.bound = 2.0 * rep.theta_sup;
  rep.bound_ok = rep.max_gap <= rep.bound + 1e-12;
  rep.max_identity_error = acc.ident;
  rep.max_gap_first_half = acc.first;
  rep.max_gap_second_half = acc.second;
  rep.martingale_increment_mean = to_estimate(acc.inc);
  return rep;
}

// ---------------------------------------------------------------- local limit theorem

std::vector<LltRow> llt_unconditioned(const WalkKernel& kernel, const Vec& x, double y, const std::vector<int>& ns,
                                      const SeparableFunction& h, std::size_t reps, const RandomStream& rng) {
  if (reps < 1000) fail(ErrorCode::TooFewSamples, "local limit check needs at least 1000 replicas");
  require_nondegenerate(kernel);
  if (ns.empty()) return {};
  const int nmax = *std::max_element(ns.begin(), ns.end());
  const StatsVec acc = reduce_paths<StatsVec>(reps, [&](std::size_t i, StatsVec& a) {
    a.ensure(ns.size());
    const RandomStream pr = rng.child(i);
    Vec cur = x;
    double s = 0.0;
    for (int k = 1; k <= nmax; ++k) {
      RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
      const WalkStep st = kernel.step_changed(cur, sr);
      s += st.increment;
      cur = st.x;
      for (std::size_t j = 0; j < ns.size(); ++j)
        if (ns[j] == k) a.v[j].add(h.fx(cur) * h.fu(y - s));
    }
  });
  const SpectralData& sd = kernel.spectral();
  double xpart = 0.0;
  for (int i = 0; i < sd.grid.size(); ++i) xpart += sd.pi[static_cast<std::size_t>(i)] * h.fx(sd.grid.node(i));
  std::vector<LltRow> rows;
  for (std::size_t j = 0; j < ns.size(); ++j) {
    const double sn = kernel.sigma() * std::sqrt(static_cast<double>(ns[j]));
    LltRow row;
    row.n = ns[j];
    const Estimate e = to_estimate(acc.v[j]);
    row.lhs = {sn * e.value, sn * e.se};
    const double upart = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double u) { return h.fu(u) * normal_pdf((y - u) / sn); }, h.u_lo, h.u_hi, 15, 1e-12);
    row.rhs = xpart * upart;
    row.error = std::abs(row.lhs.value - row.rhs);
    rows.push_back(row);
  }
  return rows;
}

ChangeOfMeasureResult change_of_measure_check(const WalkKernel& kernel, const Vec& x, int n,
                                              const std::function<double(const Vec&, double)>& h, std::size_t reps,
                                              const RandomStream& rng) {
  const SpectralData& sd = kernel.spectral();
  const double rx = kernel.r(x);
  auto side = [&](Measure m, const RandomStream& root) {
    const StatsVec acc = reduce_paths<StatsVec>(reps, [&](std::size_t i, StatsVec& a) {
      a.ensure(1);
      const RandomStream pr = root.child(i);
      Vec cur = x;
      double s = 0.0;
      for (int k = 1; k <= n; ++k) {
        RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
        const WalkStep st = kernel.step(m, cur, sr);
        s += st.increment;
        cur = st.x;
      }
      double v = h(cur, s);
      if (m == Measure::Plain) v *= kernel.r(cur) * std::exp(sd.s * s - n * sd.lambda) / rx;
      a.v[0].add(v);
    });
    return to_estimate(acc.v[0]);
  };
  ChangeOfMeasureResult out;
  out.n = n;
  out.lhs = side(Measure::Plain, rng.child(0));
  out.rhs = side(Measure::Changed, rng.child(1));
  out.z = z_score(out.lhs, out.rhs);
  return out;
}

}  // namespace matbrw
