// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <boost/math/tools/roots.hpp>
#include <json.hpp>

#include "matbrw/error.hpp"
#include "matbrw/parallel.hpp"
#include "matbrw/stats.hpp"

namespace matbrw {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kEigenResidualTolerance = 1e-6;
constexpr double kDegenerateVariance = 1e-8;
constexpr double kFocTolerance = 1e-10;

double radical_inverse(std::uint64_t j) {
  std::uint64_t x = j;
  x = ((x >> 1) & 0x5555555555555555ull) | ((x & 0x5555555555555555ull) << 1);
  x = ((x >> 2) & 0x3333333333333333ull) | ((x & 0x3333333333333333ull) << 2);
  x = ((x >> 4) & 0x0F0F0F0F0F0F0F0Full) | ((x & 0x0F0F0F0F0F0F0F0Full) << 4);
  x = ((x >> 8) & 0x00FF00FF00FF00FFull) | ((x & 0x00FF00FF00FF00FFull) << 8);
  x = ((x >> 16) & 0x0000FFFF0000FFFFull) | ((x & 0x0000FFFF0000FFFFull) << 16);
  x = (x >> 32) | (x << 32);
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

struct PowerResult {
  double kappa = 0.0;
  Eigen::VectorXd vec;
  int iterations = 0;
  double residual = 0.0;
};

// Right eigenvector of a nonnegative matrix, normalized to unit sup-norm.
PowerResult power_right(const Eigen::MatrixXd& a, const Eigen::VectorXd& start, double tol, int max_iter) {
  PowerResult out;
  Eigen::VectorXd v = start / start.cwiseAbs().maxCoeff();
  double prev = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::VectorXd w = a * v;
    const double k = w.cwiseAbs().maxCoeff();
    if (!(k > 0.0) || !std::isfinite(k)) fail(ErrorCode::NoConvergence, "power iteration collapsed");
    w /= k;
    const double res = (w - v).cwiseAbs().maxCoeff();
    v = std::move(w);
    out.iterations = it;
    if (it > 1 && std::abs(k - prev) < tol * k && res < 1e-12) break;
    prev = k;
  }
  Eigen::VectorXd av = a * v;
  out.kappa = av.cwiseAbs().maxCoeff();
  out.residual = (av - out.kappa * v).cwiseAbs().maxCoeff() / out.kappa;
  out.vec = v;
  return out;
}

// Left eigenvector normalized to unit l1-norm.
PowerResult power_left(const Eigen::MatrixXd& a, double tol, int max_iter) {
  PowerResult out;
  const Eigen::Index k = a.rows();
  Eigen::RowVectorXd v = Eigen::RowVectorXd::Constant(k, 1.0 / static_cast<double>(k));
  double prev = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    Eigen::RowVectorXd w = v * a;
    const double s = w.cwiseAbs().sum();
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::NoConvergence, "adjoint iteration collapsed");
    w /= s;
    const double res = (w - v).cwiseAbs().sum();
    v = std::move(w);
    out.iterations = it;
    if (it > 1 && std::abs(s - prev) < tol * s && res < 1e-13) break;
    prev = s;
  }
  Eigen::RowVectorXd va = v * a;
  out.kappa = va.sum();
  out.residual = (va - out.kappa * v).cwiseAbs().sum() / out.kappa;
  out.vec = v.transpose();
  return out;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

std::string to_string(SpectralMethod m) {
  switch (m) {
    case SpectralMethod::Automatic: return "auto";
    case SpectralMethod::Quadrature: return "quadrature";
    case SpectralMethod::Pool: return "pool";
  }
  return "auto";
}

std::string to_string(PoolSampling p) { return p == PoolSampling::Stratified ? "stratified" : "iid"; }

// ---------------------------------------------------------------- pool operator

OperatorApprox OperatorApprox::build(const MatrixLaw& law, const ProjectiveGrid& grid, std::size_t pool_size,
                                     PoolSampling sampling, std::uint64_t seed) {
  if (pool_size < 1) fail(ErrorCode::InsufficientPool, "empty matrix pool");
  if (grid.dim() != law.dim()) fail(ErrorCode::InvalidArgument, "grid and law dimensions differ");
  OperatorApprox op;
  const int d = law.dim();
  op.k_ = grid.size();
  op.m_ = pool_size;
  op.w_ = d == 1 ? 1 : (d == 2 ? 2 : d + 1);
  const std::size_t cells = static_cast<std::size_t>(op.k_) * op.m_;
  op.sigma_.assign(cells, 0.0);
  op.node_.assign(cells * static_cast<std::size_t>(op.w_), 0);
  op.weight_.assign(cells * static_cast<std::size_t>(op.w_), 0.0);
  const RandomStream root(seed);
  const double shift = root.child(~std::uint64_t{0}).uniform();
  std::vector<Vec> nodes;
  for (int i = 0; i < op.k_; ++i) nodes.push_back(grid.node(i));
  parallel_for(op.m_, 256, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      RandomStream rng = root.child(j);
      Mat g;
      if (sampling == PoolSampling::Stratified) {
        double u = radical_inverse(j) + shift;
        if (u >= 1.0) u -= 1.0;
        g = law.sample_with_uniform(u, rng);
      } else {
        g = law.sample(rng);
      }
      for (int i = 0; i < op.k_; ++i) {
        Vec v = nodes[static_cast<std::size_t>(i)];
        const double s = move_direction(g, v);
        const std::size_t c = op.idx(i, j);
        op.sigma_[c] = s;
        const Stencil st = grid.locate(v);
        for (int q = 0; q < st.size; ++q) {
          op.node_[c * op.w_ + q] = st.node[q];
          op.weight_[c * op.w_ + q] = st.weight[q];
        }
      }
    }
  });
  return op;
}

Eigen::MatrixXd OperatorApprox::transfer(double s, double shift) const {
  RowMat a = RowMat::Zero(k_, k_);
  const double scale = std::exp(s * shift) / static_cast<double>(m_);
  parallel_for(static_cast<std::size_t>(k_), 8, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double* row = a.row(static_cast<Eigen::Index>(i)).data();
      const std::size_t base = i * m_;
      for (std::size_t j = 0; j < m_; ++j) {
        const std::size_t c = base + j;
        const double e = std::exp(s * sigma_[c]);
        for (int q = 0; q < w_; ++q) row[node_[c * w_ + q]] += e * weight_[c * w_ + q];
      }
    }
  });
  return Eigen::MatrixXd(a * scale);
}

std::vector<double> OperatorApprox::contributions(double s, double shift, const std::vector<double>& r,
                                                  const std::vector<double>& nu) const {
  std::vector<double> c(m_, 0.0);
  double nr = 0.0;
  for (int i = 0; i < k_; ++i) nr += nu[static_cast<std::size_t>(i)] * r[static_cast<std::size_t>(i)];
  const double pre = std::exp(s * shift) / nr;
  for (int i = 0; i < k_; ++i) {
    const double ni = nu[static_cast<std::size_t>(i)];
    if (ni == 0.0) continue;
    for (std::size_t j = 0; j < m_; ++j) {
      const std::size_t cc = idx(i, j);
      double rv = 0.0;
      for (int q = 0; q < w_; ++q) rv += weight_[cc * w_ + q] * r[node_[cc * w_ + q]];
      c[j] += ni * std::exp(s * sigma_[cc]) * rv;
    }
  }
  for (double& x : c) x *= pre;
  return c;
}

std::vector<double> OperatorApprox::weighted_sigma(double s, double shift, const std::vector<double>& r) const {
  std::vector<double> out(static_cast<std::size_t>(k_), 0.0);
  const double pre = std::exp(s * shift) / static_cast<double>(m_);
  parallel_for(static_cast<std::size_t>(k_), 8, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m_; ++j) {
        const std::size_t cc = idx(static_cast<int>(i), j);
        double rv = 0.0;
        for (int q = 0; q < w_; ++q) rv += weight_[cc * w_ + q] * r[node_[cc * w_ + q]];
        const double sg = sigma_[cc] + shift;
        acc += std::exp(s * sigma_[cc]) * sg * rv;
      }
      out[i] = acc * pre;
    }
  });
  return out;
}

// ---------------------------------------------------------------- data

std::vector<double> SpectralData::pi_density() const {
  std::vector<double> out(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) out[i] = pi[i] / grid.cell_mass(static_cast<int>(i));
  return out;
}

double SpectralData::pi_density_at(const Vec& x) const {
  const Stencil st = grid.locate(x);
  double s = 0.0;
  for (int k = 0; k < st.size; ++k) s += st.weight[k] * pi[st.node[k]] / grid.cell_mass(static_cast<int>(st.node[k]));
  return s;
}

double CohomologicalSolution::sup_norm() const {
  double m = 0.0;
  for (double t : theta) m = std::max(m, std::abs(t));
  return m;
}

// ---------------------------------------------------------------- engine

SpectralEngine::SpectralEngine(BranchingModel model, SpectralConfig config)
    : model_(std::move(model)), config_(config) {
  const int d = model_.dim();
  const bool invariant = model_.matrices.invariant();
  method_ = config_.method;
  if (method_ == SpectralMethod::Automatic) method_ = invariant ? SpectralMethod::Quadrature : SpectralMethod::Pool;
  if (method_ == SpectralMethod::Quadrature && !invariant)
    fail(ErrorCode::InvalidArgument, "quadrature path needs an orthogonally invariant law");
  int k = config_.grid_size;
  if (d == 1) k = 1;
  else if (k == 0) k = d == 2 ? 512 : 256;
  config_.grid_size = k;
  if (config_.pool_size == 0) config_.pool_size = d == 1 ? 100000 : 10000;
  grid_ = ProjectiveGrid::make(d, k);
  if (method_ == SpectralMethod::Pool) {
    approx_ = std::make_shared<const OperatorApprox>(
        OperatorApprox::build(model_.matrices, grid_, config_.pool_size, config_.sampling, config_.seed));
  }
}

std::pair<double, double> SpectralEngine::s_domain() const { return model_.matrices.mass_domain(); }

double SpectralEngine::log_kappa(double s, double tilt) const {
  const auto [lo, hi] = s_domain();
  if (!(s > lo && s < hi)) fail(ErrorCode::OutOfRange, "s outside the moment domain");
  const double shift = tilt - model_.matrices.tilt();
  if (method_ == SpectralMethod::Quadrature) return model_.matrices.log_mass(s) + s * shift;
  const Eigen::MatrixXd a = approx_->transfer(s, shift);
  const PowerResult pr =
      power_right(a, Eigen::VectorXd::Ones(a.rows()), config_.tolerance, config_.max_iterations);
  if (pr.residual > kEigenResidualTolerance) fail(ErrorCode::NoConvergence, "eigen residual above 1e-6");
  return std::log(pr.kappa);
}

Derivatives SpectralEngine::derivatives(double s, double tilt, double h) const {
  if (h <= 0.0) h = 1e-3 * std::max(1.0, std::abs(s));
  const double lp = log_kappa(s + h, tilt);
  const double l0 = log_kappa(s, tilt);
  const double lm = log_kappa(s - h, tilt);
  return {(lp - lm) / (2.0 * h), (lp - 2.0 * l0 + lm) / (h * h)};
}

SpectralData SpectralEngine::leading_eigen(double s, double tilt) const {
  const auto [lo, hi] = s_domain();
  if (!(s > lo && s < hi)) fail(ErrorCode::OutOfRange, "s outside the moment domain");
  SpectralData out;
  out.s = s;
  out.tilt = tilt;
  out.method = method_;
  out.grid = grid_;
  out.mean_offspring = model_.offspring.mean();
  const std::size_t k = static_cast<std::size_t>(grid_.size());
  if (method_ == SpectralMethod::Quadrature) {
    out.lambda = log_kappa(s, tilt);
    out.kappa = std::exp(out.lambda);
    out.r.assign(k, 1.0);
    out.nu.assign(k, 1.0 / static_cast<double>(k));
    out.pi = out.nu;
  } else {
    const double shift = tilt - model_.matrices.tilt();
    const Eigen::MatrixXd a = approx_->transfer(s, shift);
    const PowerResult right =
        power_right(a, Eigen::VectorXd::Ones(a.rows()), config_.tolerance, config_.max_iterations);
    const PowerResult left = power_left(a, config_.tolerance, config_.max_iterations);
    if (right.residual > kEigenResidualTolerance || left.residual > kEigenResidualTolerance)
      fail(ErrorCode::NoConvergence, "eigen residual above 1e-6 after " + std::to_string(right.iterations) + " iterations");
    Eigen::VectorXd r = right.vec;
    const Eigen::VectorXd nu = left.vec;
    if (r.minCoeff() <= 0.0) fail(ErrorCode::NonPositiveEigenfunction, "eigenfunction is not strictly positive");
    r /= nu.dot(r);
    out.kappa = nu.transpose() * a * r;
    out.lambda = std::log(out.kappa);
    out.iterations = std::max(right.iterations, left.iterations);
    out.eigen_residual = (a * r - out.kappa * r).cwiseAbs().maxCoeff() / (out.kappa * r.cwiseAbs().maxCoeff());
    out.adjoint_residual = left.residual;
    // pi Q = pi with Q(i, l) = A(i, l) r_l / (kappa r_i), started from nu o r.
    Eigen::MatrixXd q = a;
    for (Eigen::Index i = 0; i < q.rows(); ++i)
      for (Eigen::Index l = 0; l < q.cols(); ++l) q(i, l) *= r(l) / (out.kappa * r(i));
    Eigen::RowVectorXd pi = nu.cwiseProduct(r).transpose();
    pi /= pi.sum();
    for (int it = 0; it < 200; ++it) {
      Eigen::RowVectorXd next = pi * q;
      next /= next.sum();
      const double change = (next - pi).cwiseAbs().sum();
      pi = std::move(next);
      if (change < 1e-14) break;
    }
    Eigen::RowVectorXd piq = pi * q;
    out.stationarity_residual = (piq - pi).cwiseAbs().sum();
    out.r = to_std(r);
    out.nu = to_std(nu);
    out.pi = to_std(pi.transpose());
    out.kappa_se = 0.0;
    const std::vector<double> c = approx_->contributions(s, shift, out.r, out.nu);
    RunningStats st;
    for (double x : c) st.add(x);
    out.kappa_se = st.stderr_mean();
  }
  const Derivatives dv = derivatives(s, tilt);
  out.dlambda = dv.first;
  out.d2lambda = dv.second;
  out.sigma2 = dv.second;
  out.degenerate = !(out.sigma2 > kDegenerateVariance);
  out.m = out.kappa * out.mean_offspring;
  return out;
}

double SpectralEngine::kappa_se(double s) const {
  if (method_ == SpectralMethod::Quadrature) return 0.0;
  return leading_eigen(s).kappa_se;
}

GammaResult SpectralEngine::gamma(int sign) const {
  if (sign != 1 && sign != -1) fail(ErrorCode::InvalidArgument, "sign must be +1 or -1");
  GammaResult out;
  out.sign = sign;
  const auto [lo, hi] = s_domain();
  const double edge = sign > 0 ? hi : -lo;
  double umax = std::min(config_.s_max, edge);
  if (umax < config_.s_max) umax -= 1e-3 * std::max(1.0, umax);
  const double umin = 1e-2;
  const double tilt = model_.matrices.tilt();
  const double log_n = std::log(model_.offspring.mean());
  auto g = [&](double u) { return (log_n + log_kappa(sign * u, tilt)) / u; };
  auto foc = [&](double u) {
    const double s = sign * u;
    return log_n + log_kappa(s, tilt) - s * derivatives(s, tilt).first;
  };

  // F = log m(s) - s (log m)'(s) decreases in u, so the first sign change on a
  // doubling ladder bounds the minimizer. Keeps the search away from large |s|
  // where the pool operator is poorly conditioned.
  for (double u = 1.0; u < umax; u *= 2.0) {
    if (foc(u) < -kFocTolerance) {
      umax = u;
      break;
    }
  }

  // Golden-section search for the minimizer of g on [umin, umax].
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = umin, b = umax;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double gc = g(c), gd = g(d);
  while (b - a > 1e-7 * std::max(1.0, b)) {
    if (gc < gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - invphi * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + invphi * (b - a);
      gd = g(d);
    }
  }
  double u = 0.5 * (a + b);

  const double f_lo = foc(umin);
  const double f_hi = foc(umax);
  if (f_lo > kFocTolerance && f_hi < -kFocTolerance) {
    // g' = -F / u^2, so the minimizer is the root of F.
    double ua = std::max(umin, u - 0.05 * std::max(1.0, u)), ub = std::min(umax, u + 0.05 * std::max(1.0, u));
    double fa = foc(ua), fb = foc(ub);
    if (!(fa > 0.0 && fb < 0.0)) {
      ua = umin;
      ub = umax;
      fa = f_lo;
      fb = f_hi;
    }
    std::uintmax_t iters = 100;
    const auto root = boost::math::tools::toms748_solve(foc, ua, ub, fa, fb,
                                                        boost::math::tools::eps_tolerance<double>(46), iters);
    u = 0.5 * (root.first + root.second);
    out.interior = true;
  } else {
    out.interior = false;
  }
  out.s_star = sign * u;
  out.value = sign * g(u);
  out.foc_residual = foc(u);
  if (method_ == SpectralMethod::Pool) {
    const SpectralData sd = leading_eigen(out.s_star);
    out.se = sd.kappa_se / (sd.kappa * u);
  }
  return out;
}

double SpectralEngine::rate_function(double q) const {
  const auto [lo, hi] = s_domain();
  const double smin = std::max(-config_.s_max, std::isfinite(lo) ? lo + 1e-3 * std::max(1.0, std::abs(lo)) : lo);
  const double smax = std::min(config_.s_max, hi);
  const Derivatives d0 = derivatives(0.0);
  if (!(d0.second > kDegenerateVariance)) {
    if (std::abs(q - d0.first) < 1e-9) return 0.0;
    fail(ErrorCode::OutOfRange, "q outside the range of the derivative of Lambda (degenerate law)");
  }
  const double qlo = derivatives(smin).first, qhi = derivatives(smax).first;
  if (!(q >= qlo && q <= qhi)) fail(ErrorCode::OutOfRange, "q outside the range of the derivative of Lambda");
  double a = smin, b = smax, s = 0.0;
  for (int it = 0; it < 200; ++it) {
    const Derivatives dv = derivatives(s);
    const double f = dv.first - q;
    if (std::abs(f) < 1e-11) break;
    if (f > 0.0) b = s;
    else a = s;
    double next = dv.second > 0.0 ? s - f / dv.second : 0.5 * (a + b);
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - s) < 1e-14) {
      s = next;
      break;
    }
    s = next;
  }
  return s * q - log_kappa(s);
}

BoundaryCalibration SpectralEngine::calibrate_boundary(int sign) const {
  const GammaResult gr = gamma(sign);
  if (!gr.interior)
    fail(ErrorCode::NotCalibratable, "log m(s) - s (log m)'(s) has no root on the admissible s-range");
  const double t0 = model_.matrices.tilt();
  const double log_n = std::log(model_.offspring.mean());
  double alpha = gr.s_star;
  double delta = -derivatives(alpha, t0).first;
  BoundaryCalibration cal;
  cal.sign = sign;
  for (int it = 0; it < 50; ++it) {
    const Derivatives dv = derivatives(alpha, t0);
    const double g1 = log_n + log_kappa(alpha, t0) + alpha * delta;
    const double g2 = dv.first + delta;
    cal.newton_iterations = it;
    if (std::abs(g1) < 1e-13 && std::abs(g2) < 1e-13) break;
    const double j11 = dv.first + delta, j12 = alpha, j21 = dv.second, j22 = 1.0;
    const double det = j11 * j22 - j12 * j21;
    if (std::abs(det) < 1e-300) fail(ErrorCode::NotCalibratable, "singular Newton system");
    const double da = (g1 * j22 - j12 * g2) / det;
    const double dd = (j11 * g2 - j21 * g1) / det;
    alpha -= da;
    delta -= dd;
    if (!std::isfinite(alpha) || alpha * sign <= 0.0) fail(ErrorCode::NotCalibratable, "Newton left the admissible range");
    if (std::abs(da) < 1e-14 && std::abs(dd) < 1e-14) break;
  }
  const double tilt = t0 + delta;
  const Derivatives dt = derivatives(alpha, tilt);
  const double log_mt = log_n + log_kappa(alpha, tilt);
  cal.s = alpha;
  cal.exponent = std::abs(alpha);
  cal.tilt = tilt;
  cal.residual_mass = std::abs(std::exp(log_mt) - 1.0);
  cal.residual_derivative = std::abs(std::exp(log_mt) * dt.first);
  cal.sigma = std::sqrt(std::max(0.0, dt.second));
  if (cal.residual_mass >= 1e-3 || cal.residual_derivative >= 1e-3)
    fail(ErrorCode::NotCalibratable, "calibration residuals exceed 1e-3");
  return cal;
}

std::vector<double> SpectralEngine::sigma_bar(const SpectralData& data) const {
  const std::size_t k = static_cast<std::size_t>(grid_.size());
  if (method_ == SpectralMethod::Quadrature) return std::vector<double>(k, data.dlambda);
  const double shift = data.tilt - model_.matrices.tilt();
  std::vector<double> ws = approx_->weighted_sigma(data.s, shift, data.r);
  for (std::size_t i = 0; i < k; ++i) ws[i] /= data.kappa * data.r[i];
  return ws;
}

CohomologicalSolution SpectralEngine::solve_cohomological(const SpectralData& data) const {
  CohomologicalSolution sol;
  sol.sigma_bar = sigma_bar(data);
  const std::size_t k = sol.sigma_bar.size();
  double c = 0.0;
  for (std::size_t i = 0; i < k; ++i) c += data.pi[i] * sol.sigma_bar[i];
  sol.centering = c;
  sol.centering_flag = std::abs(c) > 1e-4;
  Eigen::MatrixXd q;
  if (method_ == SpectralMethod::Quadrature) {
    q = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
  } else {
    q = approx_->transfer(data.s, data.tilt - model_.matrices.tilt());
    for (Eigen::Index i = 0; i < q.rows(); ++i)
      for (Eigen::Index l = 0; l < q.cols(); ++l)
        q(i, l) *= data.r[static_cast<std::size_t>(l)] / (data.kappa * data.r[static_cast<std::size_t>(i)]);
  }
  Eigen::VectorXd term(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) term(static_cast<Eigen::Index>(i)) = sol.sigma_bar[i] - c;
  Eigen::VectorXd theta = term;
  const Eigen::VectorXd centered = term;
  double norm = term.cwiseAbs().maxCoeff();
  sol.term_norms.push_back(norm);
  int rising = 0;
  while (norm >= 1e-10) {
    term = q * term;
    theta += term;
    const double next = term.cwiseAbs().maxCoeff();
    rising = next > 0.999 * norm ? rising + 1 : 0;
    norm = next;
    sol.term_norms.push_back(norm);
    if (rising > 50 || sol.term_norms.size() > 20000 || !std::isfinite(norm))
      fail(ErrorCode::NoDecay, "Neumann series terms are not decaying geometrically");
  }
  sol.terms = static_cast<int>(sol.term_norms.size());
  sol.residual = (centered - theta + q * theta).cwiseAbs().maxCoeff();
  sol.theta = to_std(theta);
  return sol;
}

BranchingModel calibrated_model(const BranchingModel& model, const BoundaryCalibration& cal) {
  return model.with_tilt(cal.tilt);
}

// ---------------------------------------------------------------- JSON

std::string spectral_to_json(const SpectralData& d) {
  nlohmann::json j;
  j["schema"] = "matbrw.spectral";
  j["version"] = 1;
  j["s"] = d.s;
  j["tilt"] = d.tilt;
  j["method"] = to_string(d.method);
  j["grid"] = {{"dim", d.grid.dim()}, {"size", d.grid.size()}};
  j["kappa"] = d.kappa;
  j["kappa_se"] = d.kappa_se;
  j["lambda"] = d.lambda;
  j["dlambda"] = d.dlambda;
  j["d2lambda"] = d.d2lambda;
  j["sigma2"] = d.sigma2;
  j["mean_offspring"] = d.mean_offspring;
  j["m"] = d.m;
  j["r"] = d.r;
  j["nu"] = d.nu;
  j["pi"] = d.pi;
  j["eigen_residual"] = d.eigen_residual;
  j["adjoint_residual"] = d.adjoint_residual;
  j["stationarity_residual"] = d.stationarity_residual;
  j["iterations"] = d.iterations;
  j["degenerate"] = d.degenerate;
  return j.dump(1);
}

SpectralData spectral_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    fail(ErrorCode::IoError, std::string("spectral JSON: ") + e.what());
  }
  if (j.value("schema", "") != "matbrw.spectral" || j.value("version", 0) != 1)
    fail(ErrorCode::IoError, "unsupported spectral JSON schema");
  SpectralData d;
  try {
    d.s = j.at("s");
    d.tilt = j.at("tilt");
    const std::string m = j.at("method");
    d.method = m == "pool" ? SpectralMethod::Pool : SpectralMethod::Quadrature;
    d.grid = ProjectiveGrid::make(j.at("grid").at("dim"), j.at("grid").at("size"));
    d.kappa = j.at("kappa");
    d.kappa_se = j.at("kappa_se");
    d.lambda = j.at("lambda");
    d.dlambda = j.at("dlambda");
    d.d2lambda = j.at("d2lambda");
    d.sigma2 = j.at("sigma2");
    d.mean_offspring = j.at("mean_offspring");
    d.m = j.at("m");
    d.r = j.at("r").get<std::vector<double>>();
    d.nu = j.at("nu").get<std::vector<double>>();
    d.pi = j.at("pi").get<std::vector<double>>();
    d.eigen_residual = j.at("eigen_residual");
    d.adjoint_residual = j.at("adjoint_residual");
    d.stationarity_residual = j.at("stationarity_residual");
    d.iterations = j.at("iterations");
    d.degenerate = j.at("degenerate");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, std::string("spectral JSON: ") + e.what());
  }
  const std::size_t k = static_cast<std::size_t>(d.grid.size());
  if (d.r.size() != k || d.nu.size() != k || d.pi.size() != k) fail(ErrorCode::IoError, "grid arrays have wrong length");
  return d;
}

void write_spectral(const std::string& path, const SpectralData& data) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << spectral_to_json(data) << '\n';
}

SpectralData read_spectral(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return spectral_from_json(ss.str());
}

}  // namespace matbrw
