// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/tools/minima.hpp>

#include "matbrw/error.hpp"

namespace matbrw {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kSingularResample = 1e-10;
constexpr int kMaxResamples = 10000;

double normal_quantile(double u) { return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u); }

double log_sum_exp(const std::vector<double>& v) {
  double m = -kInf;
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// log of the integral of exp(ell) over the real line, ell concave.
template <class F>
double log_integral(F ell, double guess, double scale) {
  double x = guess, h = scale;
  double fx = ell(x);
  double a, b;
  if (ell(x + h) > fx) {
    a = x;
    for (;;) {
      const double nx = x + h;
      const double fn = ell(nx);
      if (fn <= fx) {
        b = nx;
        break;
      }
      a = x;
      x = nx;
      fx = fn;
      h *= 2.0;
    }
  } else if (ell(x - h) > fx) {
    b = x;
    for (;;) {
      const double nx = x - h;
      const double fn = ell(nx);
      if (fn <= fx) {
        a = nx;
        break;
      }
      b = x;
      x = nx;
      fx = fn;
      h *= 2.0;
    }
  } else {
    a = x - h;
    b = x + h;
  }
  const auto best = boost::math::tools::brent_find_minima([&](double u) { return -ell(u); }, a, b, 50);
  const double mode = best.first;
  const double peak = -best.second;
  double left = scale, right = scale;
  while (ell(mode - left) > peak - 60.0) left *= 1.5;
  while (ell(mode + right) > peak - 60.0) right *= 1.5;
  const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [&](double u) { return std::exp(ell(u) - peak); }, mode - left, mode + right, 20, 1e-14);
  return peak + std::log(integral);
}

Mat haar_orthogonal(int d, RandomStream& rng) {
  Mat z(d, d);
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < d; ++i) z(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(z);
  Mat q = qr.householderQ();
  const Mat& r = qr.matrixQR();
  for (int j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

Mat rotation(double a) {
  Mat r(2, 2);
  r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  return r;
}

}  // namespace

// ---------------------------------------------------------------- offspring

OffspringLaw OffspringLaw::explicit_probabilities(std::vector<double> p) {
  if (p.empty()) fail(ErrorCode::InvalidArgument, "empty offspring distribution");
  double total = 0.0;
  for (double q : p) {
    if (!(q >= 0.0) || !std::isfinite(q)) fail(ErrorCode::InvalidArgument, "offspring probabilities must be >= 0");
    total += q;
  }
  if (std::abs(total - 1.0) > 1e-12) fail(ErrorCode::InvalidArgument, "offspring probabilities must sum to 1");
  OffspringLaw law;
  law.kind_ = Kind::Explicit;
  law.p_ = std::move(p);
  law.finish();
  return law;
}

OffspringLaw OffspringLaw::poisson(double mean) {
  if (!(mean > 0.0)) fail(ErrorCode::InvalidArgument, "Poisson mean must be positive");
  OffspringLaw law;
  law.kind_ = Kind::Poisson;
  law.parameter_ = mean;
  law.p_.clear();
  double pk = std::exp(-mean), cum = 0.0;
  for (unsigned k = 0; k < 10000; ++k) {
    law.p_.push_back(pk);
    cum += pk;
    if (k > mean && 1.0 - cum < 1e-17) break;
    pk *= mean / static_cast<double>(k + 1);
  }
  law.finish();
  law.mean_ = mean;
  law.second_moment_ = mean + mean * mean;
  return law;
}

OffspringLaw OffspringLaw::geometric(double mean) {
  if (!(mean > 0.0)) fail(ErrorCode::InvalidArgument, "geometric mean must be positive");
  OffspringLaw law;
  law.kind_ = Kind::Geometric;
  law.parameter_ = mean;
  law.p_.clear();
  const double p = 1.0 / (1.0 + mean);
  double pk = p, cum = 0.0;
  for (unsigned k = 0; k < 100000; ++k) {
    law.p_.push_back(pk);
    cum += pk;
    if (1.0 - cum < 1e-17) break;
    pk *= 1.0 - p;
  }
  law.finish();
  law.mean_ = mean;
  law.second_moment_ = mean * (1.0 + 2.0 * mean);
  return law;
}

void OffspringLaw::finish() {
  cdf_.resize(p_.size());
  std::partial_sum(p_.begin(), p_.end(), cdf_.begin());
  for (double& c : cdf_) c /= cdf_.back();
  mean_ = 0.0;
  second_moment_ = 0.0;
  deterministic_ = false;
  for (std::size_t k = 0; k < p_.size(); ++k) {
    mean_ += static_cast<double>(k) * p_[k];
    second_moment_ += static_cast<double>(k * k) * p_[k];
    if (p_[k] == 1.0) deterministic_ = true;
  }
}

unsigned OffspringLaw::sample(RandomStream& rng) const {
  if (deterministic_) return static_cast<unsigned>(std::find(p_.begin(), p_.end(), 1.0) - p_.begin());
  const double u = rng.uniform();
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  return static_cast<unsigned>(std::min<std::ptrdiff_t>(it - cdf_.begin(), static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
}

// ---------------------------------------------------------------- matrix law

std::string component_name(const LawComponent& c) {
  struct V {
    std::string operator()(const ScalarLognormal&) const { return "scalar_lognormal"; }
    std::string operator()(const Ginibre&) const { return "ginibre"; }
    std::string operator()(const DiagRotation&) const { return "diag_rotation"; }
    std::string operator()(const ScalarTwoAtom&) const { return "scalar_two_atom"; }
    std::string operator()(const ScalarConstant&) const { return "scalar_constant"; }
    std::string operator()(const Orthogonal&) const { return "orthogonal"; }
  };
  return std::visit(V{}, c);
}

MatrixLaw::MatrixLaw(int d, std::vector<WeightedComponent> components, double tilt)
    : d_(d), components_(std::move(components)), tilt_(tilt) {
  if (d < 1 || d > kMaxDim) fail(ErrorCode::InvalidArgument, "dimension must be in [1, 8]");
  if (components_.empty()) fail(ErrorCode::InvalidArgument, "matrix law needs a component");
  if (!std::isfinite(tilt)) fail(ErrorCode::InvalidArgument, "tilt must be finite");
  double total = 0.0;
  for (const auto& c : components_) {
    if (!(c.weight > 0.0)) fail(ErrorCode::InvalidArgument, "mixture weights must be positive");
    total += c.weight;
    const bool scalar_only = std::holds_alternative<ScalarLognormal>(c.law) || std::holds_alternative<ScalarTwoAtom>(c.law);
    if (scalar_only && d != 1) fail(ErrorCode::InvalidArgument, component_name(c.law) + " requires d = 1");
    if (std::holds_alternative<DiagRotation>(c.law) && d != 2)
      fail(ErrorCode::InvalidArgument, "diag_rotation requires d = 2");
    if (const auto* l = std::get_if<ScalarLognormal>(&c.law); l && !(l->sd > 0.0))
      fail(ErrorCode::InvalidArgument, "lognormal sd must be positive");
    if (const auto* g = std::get_if<Ginibre>(&c.law); g && !(g->scale > 0.0))
      fail(ErrorCode::InvalidArgument, "ginibre scale must be positive");
    if (const auto* r = std::get_if<DiagRotation>(&c.law); r && !(r->log_sd > 0.0 && r->angle_sd > 0.0))
      fail(ErrorCode::InvalidArgument, "diag_rotation spreads must be positive");
    if (const auto* a = std::get_if<ScalarTwoAtom>(&c.law); a && !(a->p_a > 0.0 && a->p_a < 1.0))
      fail(ErrorCode::InvalidArgument, "two-atom probability must lie in (0, 1)");
  }
  cumulative_.clear();
  double acc = 0.0;
  for (auto& c : components_) {
    c.weight /= total;
    acc += c.weight;
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

MatrixLaw MatrixLaw::with_tilt(double t) const {
  MatrixLaw out = *this;
  out.tilt_ = t;
  return out;
}

bool MatrixLaw::has_density() const noexcept {
  return std::all_of(components_.begin(), components_.end(), [](const WeightedComponent& c) {
    return std::holds_alternative<ScalarLognormal>(c.law) || std::holds_alternative<Ginibre>(c.law) ||
           std::holds_alternative<DiagRotation>(c.law);
  });
}

bool MatrixLaw::invariant() const noexcept {
  return std::none_of(components_.begin(), components_.end(),
                      [](const WeightedComponent& c) { return std::holds_alternative<DiagRotation>(c.law); });
}

Mat MatrixLaw::sample_component(const LawComponent& law, double u, bool use_u, RandomStream& rng) const {
  const int d = d_;
  struct V {
    int d;
    double u;
    bool use_u;
    RandomStream& rng;
    Mat operator()(const ScalarLognormal& l) const {
      const double z = use_u ? normal_quantile(u) : rng.normal();
      return Mat::Constant(1, 1, std::exp(l.mean + l.sd * z));
    }
    Mat operator()(const Ginibre& g) const {
      Mat m(d, d);
      for (int j = 0; j < d; ++j)
        for (int i = 0; i < d; ++i) m(i, j) = g.scale * rng.normal();
      return m;
    }
    Mat operator()(const DiagRotation& r) const {
      const double z1 = use_u ? normal_quantile(u) : rng.normal();
      const double z2 = rng.normal();
      Mat diag = Mat::Zero(2, 2);
      diag(0, 0) = std::exp(r.log_mean1 + r.log_sd * z1);
      diag(1, 1) = std::exp(r.log_mean2 + r.log_sd * z2);
      const double phi = r.angle_sd * rng.normal();
      const double psi = r.angle_sd * rng.normal();
      return rotation(phi) * diag * rotation(psi);
    }
    Mat operator()(const ScalarTwoAtom& a) const {
      const double v = use_u ? u : rng.uniform();
      return Mat::Constant(1, 1, std::exp(v < a.p_a ? a.log_a : a.log_b));
    }
    Mat operator()(const ScalarConstant& c) const { return std::exp(c.log_c) * Mat::Identity(d, d); }
    Mat operator()(const Orthogonal&) const { return haar_orthogonal(d, rng); }
  };
  return std::visit(V{d, u, use_u, rng}, law);
}

Mat MatrixLaw::sample_with_uniform(double u, RandomStream& rng, int* resamples) const {
  std::size_t k = 0;
  double local = u;
  if (components_.size() > 1) {
    k = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
    k = std::min(k, components_.size() - 1);
    const double lo = k == 0 ? 0.0 : cumulative_[k - 1];
    local = std::clamp((u - lo) / components_[k].weight, 1e-300, 1.0 - 1e-16);
  }
  local = std::clamp(local, 1e-300, 1.0 - 1e-16);
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    Mat g = sample_component(components_[k].law, local, true, rng);
    if (numerically_invertible(g, kSingularResample)) return tilt_ == 0.0 ? g : Mat(std::exp(tilt_) * g);
    if (resamples) ++*resamples;
  }
  fail(ErrorCode::SingularMatrix, "matrix law keeps producing near-singular draws");
}

Mat MatrixLaw::sample(RandomStream& rng, int* resamples) const {
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    std::size_t k = 0;
    if (components_.size() > 1) {
      const double u = rng.uniform();
      k = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
      k = std::min(k, components_.size() - 1);
    }
    Mat g = sample_component(components_[k].law, 0.0, false, rng);
    if (numerically_invertible(g, kSingularResample)) return tilt_ == 0.0 ? g : Mat(std::exp(tilt_) * g);
    if (resamples) ++*resamples;
  }
  fail(ErrorCode::SingularMatrix, "matrix law keeps producing near-singular draws");
}

std::pair<double, double> MatrixLaw::mass_domain() const {
  double lo = -kInf, hi = kInf;
  for (const auto& c : components_)
    if (std::holds_alternative<Ginibre>(c.law)) lo = std::max(lo, -static_cast<double>(d_));
  return {lo, hi};
}

namespace {

double component_log_mass(const LawComponent& law, int d, double s) {
  struct V {
    int d;
    double s;
    double operator()(const ScalarLognormal& l) const {
      const double norm = std::log(l.sd * std::sqrt(2.0 * std::numbers::pi));
      return log_integral(
          [&](double xi) {
            const double z = (xi - l.mean) / l.sd;
            return s * xi - 0.5 * z * z - norm;
          },
          l.mean, l.sd);
    }
    double operator()(const Ginibre& g) const {
      const double dd = static_cast<double>(d);
      if (!(s > -dd)) return kInf;
      // ||g v|| = scale * chi_d; integrate over u = log r.
      const double norm = (0.5 * dd - 1.0) * std::log(2.0) + std::lgamma(0.5 * dd);
      return log_integral([&](double u) { return s * (std::log(g.scale) + u) + dd * u - 0.5 * std::exp(2.0 * u) - norm; },
                          0.5 * std::log(dd), 0.5);
    }
    double operator()(const DiagRotation&) const {
      fail(ErrorCode::InvalidArgument, "diag_rotation has an x-dependent norm law");
    }
    double operator()(const ScalarTwoAtom& a) const {
      return log_sum_exp({std::log(a.p_a) + s * a.log_a, std::log1p(-a.p_a) + s * a.log_b});
    }
    double operator()(const ScalarConstant& c) const { return s * c.log_c; }
    double operator()(const Orthogonal&) const { return 0.0; }
  };
  return std::visit(V{d, s}, law);
}

}  // namespace

double MatrixLaw::log_mass(double s) const {
  if (!invariant()) fail(ErrorCode::InvalidArgument, "log_mass needs an orthogonally invariant law");
  const auto [lo, hi] = mass_domain();
  if (!(s > lo && s < hi)) fail(ErrorCode::OutOfRange, "s outside the moment domain of the matrix law");
  std::vector<double> terms;
  for (const auto& c : components_) terms.push_back(std::log(c.weight) + component_log_mass(c.law, d_, s));
  return log_sum_exp(terms) + s * tilt_;
}

TiltedSampler MatrixLaw::tilted_sampler(double s) const {
  if (!invariant()) fail(ErrorCode::InvalidArgument, "exact tilted sampling needs an invariant law");
  const auto [lo, hi] = mass_domain();
  if (!(s > lo && s < hi)) fail(ErrorCode::OutOfRange, "s outside the moment domain of the matrix law");
  TiltedSampler ts;
  ts.law_ = *this;
  ts.s_ = s;
  std::vector<double> terms;
  for (const auto& c : components_) {
    terms.push_back(std::log(c.weight) + component_log_mass(c.law, d_, s));
    double pa = 0.0;
    if (const auto* a = std::get_if<ScalarTwoAtom>(&c.law)) {
      const double la = std::log(a->p_a) + s * a->log_a;
      const double lb = std::log1p(-a->p_a) + s * a->log_b;
      pa = 1.0 / (1.0 + std::exp(lb - la));
    }
    ts.atom_a_.push_back(pa);
  }
  const double total = log_sum_exp(terms);
  ts.log_mass_ = total + s * tilt_;
  double acc = 0.0;
  for (double t : terms) {
    acc += std::exp(t - total);
    ts.cumulative_.push_back(acc);
  }
  ts.cumulative_.back() = 1.0;
  return ts;
}

Mat TiltedSampler::sample(const Vec& x, RandomStream& rng) const {
  const int d = law_.dim();
  const auto& comps = law_.components();
  for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
    std::size_t k = 0;
    if (comps.size() > 1) {
      const double u = rng.uniform();
      k = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
      k = std::min(k, comps.size() - 1);
    }
    Mat g(d, d);
    const auto& law = comps[k].law;
    if (const auto* l = std::get_if<ScalarLognormal>(&law)) {
      g(0, 0) = std::exp(l->mean + s_ * l->sd * l->sd + l->sd * rng.normal());
    } else if (const auto* a = std::get_if<ScalarTwoAtom>(&law)) {
      g(0, 0) = std::exp(rng.uniform() < atom_a_[k] ? a->log_a : a->log_b);
    } else if (const auto* c = std::get_if<ScalarConstant>(&law)) {
      g = std::exp(c->log_c) * Mat::Identity(d, d);
    } else if (std::holds_alternative<Orthogonal>(law)) {
      g = haar_orthogonal(d, rng);
    } else if (const auto* gi = std::get_if<Ginibre>(&law)) {
      // Columns of g H with H e1 = x: the first is g x, tilted in its radius.
      Mat c(d, d);
      Vec w(d);
      double wn = 0.0;
      do {
        for (int i = 0; i < d; ++i) w(i) = rng.normal();
        wn = w.norm();
      } while (wn == 0.0);
      const double rho = std::sqrt(2.0 * rng.gamma(0.5 * (static_cast<double>(d) + s_)));
      c.col(0) = gi->scale * rho * w / wn;
      for (int j = 1; j < d; ++j)
        for (int i = 0; i < d; ++i) c(i, j) = gi->scale * rng.normal();
      Vec h = x;
      h(0) -= 1.0;
      const double hn2 = h.squaredNorm();
      if (hn2 < 1e-30) {
        g = c;
      } else {
        Mat hh = Mat::Identity(d, d) - (2.0 / hn2) * h * h.transpose();
        g = c * hh;
      }
    } else {
      fail(ErrorCode::InvalidArgument, "no exact tilted sampler for this component");
    }
    if (numerically_invertible(g, kSingularResample)) return law_.tilt() == 0.0 ? g : Mat(std::exp(law_.tilt()) * g);
  }
  fail(ErrorCode::SingularMatrix, "tilted sampler keeps producing near-singular draws");
}

// ---------------------------------------------------------------- nodes

NodeSample sample_node(const BranchingModel& model, RandomStream& rng) {
  NodeSample out;
  out.count = model.offspring.sample(rng);
  out.matrices.reserve(out.count);
  for (unsigned i = 0; i < out.count; ++i) out.matrices.push_back(Matrix::trusted(model.matrices.sample(rng, &out.resamples)));
  return out;
}

// ---------------------------------------------------------------- admissibility

AdmissibilityReport admissibility_report(const BranchingModel& model, std::size_t pool_size, double eta0,
                                         std::uint64_t seed) {
  if (pool_size < 10000) fail(ErrorCode::InsufficientPool, "admissibility report needs pool_size >= 1e4");
  if (!(eta0 > 0.0)) fail(ErrorCode::InvalidArgument, "eta0 must be positive");
  AdmissibilityReport rep;
  const int d = model.dim();
  rep.eta0 = eta0;
  rep.mean_offspring = model.offspring.mean();
  rep.offspring_second_moment = model.offspring.second_moment();
  rep.a1_pass = rep.mean_offspring > 1.0 && std::isfinite(rep.offspring_second_moment);
  if (!rep.a1_pass) rep.notes.push_back("A1: E N must exceed 1 with finite second moment");
  rep.density_pass = model.matrices.has_density();
  if (!rep.density_pass) rep.notes.push_back("matrix law has no density (fixture)");

  const RandomStream root(seed);
  rep.a2.finite = true;
  std::vector<Mat> first_pool;
  for (int level = 0; level < 3; ++level) {
    const std::size_t p = pool_size << level;
    RandomStream rng = root.child(static_cast<std::uint64_t>(level));
    RunningStats st;
    for (std::size_t j = 0; j < p; ++j) {
      const Mat g = model.matrices.sample(rng);
      const double ln = log_opnorm(g);
      const double lin = log_opnorm(Mat(g.inverse()));
      const double ld = log_abs_det(g);
      const double v = std::exp(eta0 * std::max(ln, lin)) * (1.0 + std::exp(static_cast<double>(d) * ln - ld));
      st.add(v);
      if (level == 0) first_pool.push_back(g);
    }
    rep.a2.pool_sizes.push_back(p);
    rep.a2.estimates.push_back(to_estimate(st));
    if (!std::isfinite(st.mean())) rep.a2.finite = false;
  }
  {
    const auto& e = rep.a2.estimates;
    const bool consistent = std::abs(e[2].value - e[0].value) <= 3.0 * std::hypot(e[0].se, e[2].se);
    const bool growing = e[1].value > e[0].value + 2.0 * std::hypot(e[0].se, e[1].se) &&
                         e[2].value > e[1].value + 2.0 * std::hypot(e[1].se, e[2].se);
    const bool precise = e[2].se <= 0.25 * std::abs(e[2].value);
    rep.a2.stable = consistent && !growing && precise;
    if (!rep.a2.stable) rep.notes.push_back("A2: moment estimate does not stabilize across pool doublings");
  }

  std::vector<Vec> xs;
  if (d == 1) {
    xs.push_back(Vec::Ones(1));
  } else if (d == 2) {
    for (int i = 0; i < 64; ++i) {
      const double a = std::numbers::pi * i / 64.0;
      Vec v(2);
      v << std::cos(a), std::sin(a);
      xs.push_back(v);
    }
  } else {
    for (int i = 0; i < d; ++i) xs.push_back(Vec::Unit(d, i));
    RandomStream rng = root.child(99);
    for (int i = 0; i < 32; ++i) {
      Vec v(d);
      for (int k = 0; k < d; ++k) v(k) = rng.normal();
      xs.push_back(v / v.norm());
    }
  }
  static constexpr double kLevels[] = {1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01};
  const double n = static_cast<double>(first_pool.size());
  for (double c : kLevels) {
    double worst = 1.0;
    for (const Vec& x : xs) {
      std::size_t hits = 0;
      for (const Mat& g : first_pool)
        if (std::log((g * x).norm()) > c) ++hits;
      worst = std::min(worst, static_cast<double>(hits) / n);
    }
    const double se = std::sqrt(std::max(worst * (1.0 - worst), 1.0 / n) / n);
    if (worst - 3.0 * se > 0.0) {
      rep.c0 = c;
      rep.c0_probability = worst;
      rep.c0_pass = true;
      break;
    }
  }
  if (!rep.c0_pass) rep.notes.push_back("no level c0 > 0 with inf_x mu{sigma(g,x) > c0} > 0");
  return rep;
}

}  // namespace matbrw
