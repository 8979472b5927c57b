// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/group_action.hpp"

#include <algorithm>
#include <limits>

#include "matbrw/error.hpp"

namespace matbrw {

double log_opnorm(const Mat& g) {
  const auto d = g.rows();
  if (d == 1) return std::log(std::abs(g(0, 0)));
  if (d == 2) {
    const double f2 = g.squaredNorm();
    const double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
    const double disc = std::sqrt(std::max(0.0, f2 * f2 - 4.0 * det * det));
    return 0.5 * std::log(0.5 * (f2 + disc));
  }
  Eigen::JacobiSVD<Mat> svd(g);
  return std::log(svd.singularValues()(0));
}

double log_specrad(const Mat& g) {
  const auto d = g.rows();
  if (d == 1) return std::log(std::abs(g(0, 0)));
  if (d == 2) {
    const double tr = g(0, 0) + g(1, 1);
    const double det = g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0);
    const double disc = 0.25 * tr * tr - det;
    if (disc >= 0.0) {
      const double root = std::sqrt(disc);
      return std::log(std::max(std::abs(0.5 * tr + root), std::abs(0.5 * tr - root)));
    }
    return 0.5 * std::log(det);
  }
  Eigen::EigenSolver<Mat> es(g, false);
  return std::log(es.eigenvalues().cwiseAbs().maxCoeff());
}

double log_abs_det(const Mat& g) {
  const auto d = g.rows();
  if (d == 1) return std::log(std::abs(g(0, 0)));
  if (d == 2) return std::log(std::abs(g(0, 0) * g(1, 1) - g(0, 1) * g(1, 0)));
  Eigen::PartialPivLU<Mat> lu(g);
  const auto& u = lu.matrixLU();
  double s = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) s += std::log(std::abs(u(i, i)));
  return s;
}

bool numerically_invertible(const Mat& g, double tolerance) {
  if (!g.allFinite()) return false;
  const double ld = log_abs_det(g);
  if (!std::isfinite(ld)) return false;
  return ld - static_cast<double>(g.rows()) * log_opnorm(g) >= std::log(tolerance);
}

void canonicalize(Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > kSignTolerance) {
      if (v(i) < 0.0) v = -v;
      return;
    }
  }
}

Matrix::Matrix(const Mat& entries) : m_(entries) {
  if (m_.rows() != m_.cols() || m_.rows() < 1 || m_.rows() > kMaxDim)
    fail(ErrorCode::InvalidArgument, "matrix must be square with 1 <= d <= 8");
  if (!numerically_invertible(m_)) fail(ErrorCode::SingularMatrix, "|det g| below tolerance");
}

Matrix Matrix::identity(int d) { return Matrix(Mat::Identity(d, d), TrustTag{}); }

Matrix Matrix::trusted(const Mat& entries) { return Matrix(entries, TrustTag{}); }

Matrix Matrix::operator*(const Matrix& o) const {
  if (o.dim() != dim()) fail(ErrorCode::InvalidArgument, "dimension mismatch");
  return Matrix(Mat(m_ * o.m_));
}

Matrix Matrix::inverse() const { return Matrix(Mat(m_.inverse())); }

Matrix Matrix::scaled(double t) const { return Matrix(Mat(std::exp(t) * m_), TrustTag{}); }

double Matrix::log_inverse_norm() const { return log_opnorm(Mat(m_.inverse())); }

ProjPoint::ProjPoint(const Vec& v) : v_(v) {
  const double n = v_.norm();
  if (v_.size() < 1 || v_.size() > kMaxDim || !(n > 0.0) || !std::isfinite(n))
    fail(ErrorCode::InvalidArgument, "direction must be a finite nonzero vector");
  v_ /= n;
  canonicalize(v_);
}

ProjPoint ProjPoint::basis(int d, int i) { return ProjPoint(Vec::Unit(d, i)); }

double ProjPoint::distance(const ProjPoint& o) const {
  const double c = std::min(1.0, std::abs(v_.dot(o.v_)));
  return std::sqrt(std::max(0.0, 1.0 - c * c));
}

LinearForm::LinearForm(const Vec& f) : f_(f) {
  const double n = f_.norm();
  if (f_.size() < 1 || f_.size() > kMaxDim || !(n > 0.0) || !std::isfinite(n))
    fail(ErrorCode::InvalidArgument, "covector must be a finite nonzero vector");
  f_ /= n;
}

LinearForm LinearForm::basis(int d, int i) { return LinearForm(Vec::Unit(d, i)); }

namespace {
void check_dims(const Matrix& g, int d) {
  if (g.dim() != d) fail(ErrorCode::InvalidArgument, "dimension mismatch");
}
}  // namespace

Moved act_with_cocycle(const Matrix& g, const ProjPoint& x) {
  check_dims(g, x.dim());
  Vec v = x.direction();
  const double s = move_direction(g.entries(), v);
  return {ProjPoint(v), s};
}

ProjPoint act(const Matrix& g, const ProjPoint& x) { return act_with_cocycle(g, x).point; }

double cocycle(const Matrix& g, const ProjPoint& x) {
  check_dims(g, x.dim());
  return std::log((g.entries() * x.direction()).norm());
}

ScalarFunctionals scalar_functionals(const Matrix& g, const Vec& v, const LinearForm& f) {
  check_dims(g, static_cast<int>(v.size()));
  check_dims(g, f.dim());
  const double c = std::abs(f.covector().dot(g.entries() * v));
  return {c > 0.0 ? std::log(c) : -std::numeric_limits<double>::infinity(),
          log_opnorm(g.entries()), log_specrad(g.entries())};
}

void ScaledProduct::left_multiply(const Mat& g) {
  unit_ = g * unit_;
  const double n = unit_.norm();
  unit_ /= n;
  log_scale_ += std::log(n);
}

double ScaledProduct::log_coeff(const Vec& f, const Vec& v) const {
  const double c = std::abs(f.dot(unit_ * v));
  return c > 0.0 ? log_scale_ + std::log(c) : -std::numeric_limits<double>::infinity();
}

double ScaledProduct::log_vector_norm(const Vec& v) const {
  return log_scale_ + std::log((unit_ * v).norm());
}

}  // namespace matbrw
