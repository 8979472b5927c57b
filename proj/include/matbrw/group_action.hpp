// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include <Eigen/Dense>

namespace matbrw {

inline constexpr int kMaxDim = 8;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

// |det g| must exceed this fraction of ||g||^d.
inline constexpr double kDetTolerance = 1e-12;
// Coordinates below this magnitude are treated as zero when fixing the sign.
inline constexpr double kSignTolerance = 1e-12;

// Raw kernels on unvalidated arrays. Used directly by the samplers.
double log_opnorm(const Mat& g);
double log_specrad(const Mat& g);
double log_abs_det(const Mat& g);
bool numerically_invertible(const Mat& g, double tolerance = kDetTolerance);
// Normalizes v and flips it so the first coordinate above kSignTolerance is positive.
void canonicalize(Vec& v);
// Moves the unit vector x to the canonical unit representative of g x and
// returns log ||g x||.
inline double move_direction(const Mat& g, Vec& x) {
  Vec y = g * x;
  const double n = y.norm();
  x = y / n;
  canonicalize(x);
  return std::log(n);
}

class Matrix {
 public:
  Matrix() : m_(Mat::Identity(1, 1)) {}
  explicit Matrix(const Mat& entries);

  static Matrix identity(int d);
  // Skips the invertibility check; the caller vouches for it.
  static Matrix trusted(const Mat& entries);

  int dim() const noexcept { return static_cast<int>(m_.rows()); }
  const Mat& entries() const noexcept { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }

  Matrix operator*(const Matrix& o) const;
  Matrix inverse() const;
  // e^t g
  Matrix scaled(double t) const;

  double log_norm() const { return log_opnorm(m_); }
  double log_inverse_norm() const;
  double log_abs_det() const { return matbrw::log_abs_det(m_); }

 private:
  struct TrustTag {};
  Matrix(const Mat& entries, TrustTag) : m_(entries) {}
  Mat m_;
};

class ProjPoint {
 public:
  ProjPoint() : v_(Vec::Ones(1)) {}
  explicit ProjPoint(const Vec& v);
  static ProjPoint basis(int d, int i);

  int dim() const noexcept { return static_cast<int>(v_.size()); }
  const Vec& direction() const noexcept { return v_; }
  // sin of the angle between the lines, in [0, 1].
  double distance(const ProjPoint& o) const;

 private:
  Vec v_;
};

class LinearForm {
 public:
  LinearForm() : f_(Vec::Ones(1)) {}
  explicit LinearForm(const Vec& f);
  static LinearForm basis(int d, int i);

  int dim() const noexcept { return static_cast<int>(f_.size()); }
  const Vec& covector() const noexcept { return f_; }

 private:
  Vec f_;
};

ProjPoint act(const Matrix& g, const ProjPoint& x);
double cocycle(const Matrix& g, const ProjPoint& x);

struct Moved {
  ProjPoint point;
  double sigma;
};
Moved act_with_cocycle(const Matrix& g, const ProjPoint& x);

struct ScalarFunctionals {
  double log_coeff;
  double log_opnorm;
  double log_specrad;
};
ScalarFunctionals scalar_functionals(const Matrix& g, const Vec& v, const LinearForm& f);

// A long product kept as unit(Frobenius) * exp(log_scale).
class ScaledProduct {
 public:
  ScaledProduct() = default;
  explicit ScaledProduct(int d) : unit_(Mat::Identity(d, d)), log_scale_(0.0) {}

  void left_multiply(const Mat& g);
  int dim() const noexcept { return static_cast<int>(unit_.rows()); }
  const Mat& unit() const noexcept { return unit_; }
  double log_scale() const noexcept { return log_scale_; }

  double log_coeff(const Vec& f, const Vec& v) const;
  double log_vector_norm(const Vec& v) const;
  double log_norm() const { return log_scale_ + log_opnorm(unit_); }
  double log_specrad() const { return log_scale_ + matbrw::log_specrad(unit_); }

 private:
  Mat unit_ = Mat::Identity(1, 1);
  double log_scale_ = 0.0;
};

}  // namespace matbrw
