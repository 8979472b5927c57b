// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "matbrw/grid.hpp"
#include "matbrw/model.hpp"

namespace matbrw {

enum class SpectralMethod { Automatic, Quadrature, Pool };
enum class PoolSampling { Stratified, Iid };

std::string to_string(SpectralMethod m);
std::string to_string(PoolSampling p);

struct SpectralConfig {
  SpectralMethod method = SpectralMethod::Automatic;  // Automatic: Quadrature when the law is invariant
  int grid_size = 0;                                  // 0: 512 for d = 2, 256 for d >= 3
  std::size_t pool_size = 0;                          // 0: 1e5 for d = 1, 1e4 otherwise
  PoolSampling sampling = PoolSampling::Stratified;
  std::uint64_t seed = 1;
  double tolerance = 1e-10;
  int max_iterations = 500;
  double s_max = 10.0;  // search bracket for gamma and calibration
};

// Monte-Carlo Ulam/Nystrom approximation of P_s on a projective grid. Holds
// sigma(g_j, x_i) and the stencil of g_j x_i for every node i and pool matrix j.
class OperatorApprox {
 public:
  static OperatorApprox build(const MatrixLaw& law, const ProjectiveGrid& grid, std::size_t pool_size,
                              PoolSampling sampling, std::uint64_t seed);

  std::size_t pool_size() const noexcept { return m_; }
  int grid_size() const noexcept { return k_; }
  int stencil_width() const noexcept { return w_; }
  double sigma(int i, std::size_t j) const { return sigma_[idx(i, j)]; }

  // A(i, l) = (1/M) sum_j exp(s (sigma_ij + shift)) weight_ijl.
  Eigen::MatrixXd transfer(double s, double shift) const;
  // Per-matrix contributions nu A_j r / (nu r) whose mean is the eigenvalue.
  std::vector<double> contributions(double s, double shift, const std::vector<double>& r,
                                    const std::vector<double>& nu) const;
  // (1/M) sum_j exp(s sigma_ij) sigma_ij (stencil . r)
  std::vector<double> weighted_sigma(double s, double shift, const std::vector<double>& r) const;

 private:
  std::size_t idx(int i, std::size_t j) const { return static_cast<std::size_t>(i) * m_ + j; }
  int k_ = 0;
  int w_ = 1;
  std::size_t m_ = 0;
  std::vector<double> sigma_;
  std::vector<std::uint32_t> node_;
  std::vector<double> weight_;
};

struct SpectralData {
  double s = 0.0;
  double tilt = 0.0;  // absolute tilt of the matrix law
  SpectralMethod method = SpectralMethod::Quadrature;
  ProjectiveGrid grid;
  double kappa = 1.0;
  double kappa_se = 0.0;
  double lambda = 0.0;
  double dlambda = 0.0;
  double d2lambda = 0.0;
  double sigma2 = 0.0;
  double mean_offspring = 1.0;
  double m = 1.0;  // kappa * E N
  std::vector<double> r;
  std::vector<double> nu;
  std::vector<double> pi;
  double eigen_residual = 0.0;
  double adjoint_residual = 0.0;
  double stationarity_residual = 0.0;
  int iterations = 0;
  bool degenerate = false;

  double r_at(const Vec& x) const { return grid.interpolate(r, x); }
  // Node values of the density of pi with respect to the uniform measure.
  std::vector<double> pi_density() const;
  double pi_density_at(const Vec& x) const;
  double log_m() const { return std::log(m); }
};

struct GammaResult {
  int sign = 1;
  double value = 0.0;
  double s_star = 0.0;
  bool interior = false;
  double foc_residual = 0.0;  // log m(s*) - s* (log m)'(s*)
  double se = 0.0;            // pool uncertainty, 0 on the quadrature path
};

struct BoundaryCalibration {
  int sign = 1;
  double exponent = 0.0;  // alpha (sign +) or beta (sign -), positive
  double s = 0.0;         // alpha or -beta
  double tilt = 0.0;      // absolute tilt making m(s) = 1 and m'(s) = 0
  double sigma = 0.0;
  double residual_mass = 0.0;
  double residual_derivative = 0.0;
  int newton_iterations = 0;
};

struct CohomologicalSolution {
  std::vector<double> theta;
  std::vector<double> sigma_bar;
  double centering = 0.0;  // pi(sigma_bar), subtracted before summing
  bool centering_flag = false;
  double residual = 0.0;
  int terms = 0;
  std::vector<double> term_norms;
  double sup_norm() const;
};

struct Derivatives {
  double first = 0.0;
  double second = 0.0;
};

class SpectralEngine {
 public:
  explicit SpectralEngine(BranchingModel model, SpectralConfig config = {});

  const BranchingModel& model() const noexcept { return model_; }
  const SpectralConfig& config() const noexcept { return config_; }
  const ProjectiveGrid& grid() const noexcept { return grid_; }
  SpectralMethod method() const noexcept { return method_; }
  const OperatorApprox* approx() const noexcept { return approx_.get(); }

  // Absolute tilt; defaults to the tilt already in the model.
  SpectralData leading_eigen(double s) const { return leading_eigen(s, model_.matrices.tilt()); }
  SpectralData leading_eigen(double s, double tilt) const;
  double log_kappa(double s, double tilt) const;
  double log_kappa(double s) const { return log_kappa(s, model_.matrices.tilt()); }
  Derivatives derivatives(double s, double tilt, double h = 0.0) const;
  Derivatives derivatives(double s) const { return derivatives(s, model_.matrices.tilt()); }
  double log_m(double s) const { return std::log(model_.offspring.mean()) + log_kappa(s); }
  double kappa_se(double s) const;

  GammaResult gamma(int sign) const;
  double rate_function(double q) const;
  BoundaryCalibration calibrate_boundary(int sign) const;
  CohomologicalSolution solve_cohomological(const SpectralData& data) const;
  // E_Q[sigma(g, x_i)] on the grid nodes.
  std::vector<double> sigma_bar(const SpectralData& data) const;

  std::pair<double, double> s_domain() const;

 private:
  BranchingModel model_;
  SpectralConfig config_;
  ProjectiveGrid grid_;
  SpectralMethod method_;
  std::shared_ptr<const OperatorApprox> approx_;
};

BranchingModel calibrated_model(const BranchingModel& model, const BoundaryCalibration& cal);

// Versioned JSON round trip.
std::string spectral_to_json(const SpectralData& data);
SpectralData spectral_from_json(const std::string& text);
void write_spectral(const std::string& path, const SpectralData& data);
SpectralData read_spectral(const std::string& path);

}  // namespace matbrw
