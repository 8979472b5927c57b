// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "matbrw/error.hpp"
#include "matbrw/group_action.hpp"
#include "matbrw/random.hpp"

using namespace matbrw;

namespace {
Mat gaussian(int d, RandomStream& r) {
  Mat g(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) g(i, j) = r.normal();
  return g;
}
Vec unit(int d, RandomStream& r) {
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = r.normal();
  return v / v.norm();
}
}  // namespace

TEST_CASE("cocycle is additive along products") {
  RandomStream r(1);
  for (int d : {1, 2, 3, 5}) {
    for (int t = 0; t < 50; ++t) {
      const Matrix g1(gaussian(d, r)), g2(gaussian(d, r));
      const ProjPoint x(unit(d, r));
      const double lhs = cocycle(g2 * g1, x);
      const double rhs = cocycle(g2, act(g1, x)) + cocycle(g1, x);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
  }
}

TEST_CASE("closed-form norms agree with decompositions") {
  RandomStream r(2);
  for (int d : {2, 3}) {
    for (int t = 0; t < 40; ++t) {
      const Mat g = gaussian(d, r);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(g);
      CHECK(log_opnorm(g) == doctest::Approx(std::log(svd.singularValues()(0))).epsilon(1e-10));
      Eigen::EigenSolver<Eigen::MatrixXd> es(g);
      double rho = 0.0;
      for (int i = 0; i < d; ++i) rho = std::max(rho, std::abs(es.eigenvalues()(i)));
      CHECK(log_specrad(g) == doctest::Approx(std::log(rho)).epsilon(1e-9));
      CHECK(log_specrad(g) <= log_opnorm(g) + 1e-12);
      CHECK(log_abs_det(g) == doctest::Approx(std::log(std::abs(g.determinant()))).epsilon(1e-10));
    }
  }
}

TEST_CASE("singular matrices are rejected") {
  Mat g(2, 2);
  g << 1.0, 2.0, 2.0, 4.0;
  try {
    Matrix m(g);
    FAIL("expected SingularMatrix");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularMatrix);
  }
}

TEST_CASE("projective points identify v and -v") {
  Vec v(2);
  v << -0.6, 0.8;
  const ProjPoint a(v), b(Vec(-v));
  CHECK(a.distance(b) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK((a.direction() - b.direction()).norm() < 1e-15);
  CHECK(a.direction().norm() == doctest::Approx(1.0));
  const ProjPoint e1 = ProjPoint::basis(2, 0), e2 = ProjPoint::basis(2, 1);
  CHECK(e1.distance(e2) == doctest::Approx(1.0));
  CHECK(e1.distance(e2) == doctest::Approx(e2.distance(e1)));
}

TEST_CASE("scalar functionals and their ordering") {
  RandomStream r(3);
  for (int t = 0; t < 50; ++t) {
    const Matrix g(gaussian(3, r));
    const Vec v = unit(3, r);
    const LinearForm f(unit(3, r));
    const ScalarFunctionals s = scalar_functionals(g, v, f);
    CHECK(s.log_coeff <= std::log((g.entries() * v).norm()) + 1e-12);
    CHECK(s.log_specrad <= s.log_opnorm + 1e-12);
  }
  Mat id = Mat::Identity(2, 2);
  const ScalarFunctionals z = scalar_functionals(Matrix(id), Vec::Unit(2, 0), LinearForm::basis(2, 1));
  CHECK(std::isinf(z.log_coeff));
  CHECK(z.log_coeff < 0);
}

TEST_CASE("scaled products track long products") {
  RandomStream r(4);
  ScaledProduct p(2);
  Mat direct = Mat::Identity(2, 2);
  const Vec v = Vec::Unit(2, 0), f = Vec::Unit(2, 1);
  for (int k = 0; k < 12; ++k) {
    const Mat g = gaussian(2, r);
    p.left_multiply(g);
    direct = g * direct;
  }
  CHECK(p.log_norm() == doctest::Approx(log_opnorm(direct)).epsilon(1e-10));
  CHECK(p.log_vector_norm(v) == doctest::Approx(std::log((direct * v).norm())).epsilon(1e-10));
  CHECK(p.log_coeff(f, v) == doctest::Approx(std::log(std::abs(f.dot(direct * v)))).epsilon(1e-9));
  CHECK(p.log_specrad() <= p.log_norm() + 1e-12);
  // Thousands of factors stay finite.
  ScaledProduct q(2);
  for (int k = 0; k < 5000; ++k) q.left_multiply(gaussian(2, r) * 10.0);
  CHECK(std::isfinite(q.log_norm()));
  CHECK(q.log_norm() > 1000.0);
}
