// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "matbrw/error.hpp"
#include "matbrw/parallel.hpp"

namespace matbrw {
namespace {

using nlohmann::json;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

json json_num(double v) {
  if (std::isfinite(v)) return v;
  return num(v);
}

struct Csv {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  void add(std::vector<std::string> r) { rows.push_back(std::move(r)); }
  std::string text(const std::string& experiment, const json& params) const {
    json h;
    h["experiment"] = experiment;
    h["columns"] = columns;
    h["params"] = params;
    std::ostringstream os;
    os << "# " << h.dump() << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << "\n";
    }
    return os.str();
  }
};

struct Context {
  const ExperimentConfig& cfg;
  ExperimentOutcome out;
  std::vector<std::pair<std::string, std::string>> files;
  json params;

  void check(const std::string& name, bool pass, const std::string& detail) { out.checks.push_back({name, pass, detail}); }
  void headline(const std::string& name, Estimate e) { out.headlines.push_back({name, e}); }
  void write(const std::string& file, const Csv& csv) {
    files.emplace_back(file, csv.text(cfg.name, params));
    out.artifacts.push_back(file);
  }
  RandomStream rng(std::uint64_t tag) const { return RandomStream(cfg.seed).child(tag); }
};

Vec start_direction(const ExperimentConfig& c) {
  const int d = c.model.dim();
  Vec x = Vec::Unit(d, 0);
  if (!c.x.empty()) {
    for (int i = 0; i < d; ++i) x(i) = c.x[static_cast<std::size_t>(i)];
    if (!(x.norm() > 0.0)) fail(ErrorCode::ConfigError, "walk.x must be nonzero");
    x /= x.norm();
  }
  canonicalize(x);
  return x;
}

int default_grid(int d) { return d == 1 ? 1 : (d == 2 ? 512 : 256); }
std::size_t default_pool(int d) { return d == 1 ? 100000 : 10000; }

// ---------------------------------------------------------------- closed forms for invariant laws

struct ClosedForm {
  double lambda = 0.0;  // log kappa
  double d1 = 0.0;
  double d2 = 0.0;
};

// kappa(s) = sum_i w_i E||g_i x||^s for laws whose norm distribution does not
// depend on x. Returns nothing for other laws or where kappa is infinite.
std::optional<ClosedForm> closed_form(const MatrixLaw& law, double s) {
  if (!law.invariant()) return std::nullopt;
  const int d = law.dim();
  const double t = law.tilt();
  double k0 = 0.0, k1 = 0.0, k2 = 0.0;
  for (const auto& wc : law.components()) {
    double l = 0.0, l1 = 0.0, l2 = 0.0;  // log kappa_i and derivatives
    double kk = 0.0, kk1 = 0.0, kk2 = 0.0;
    bool direct = false;
    if (const auto* ln = std::get_if<ScalarLognormal>(&wc.law)) {
      const double mu = ln->mean + t, v = ln->sd * ln->sd;
      l = s * mu + 0.5 * s * s * v;
      l1 = mu + s * v;
      l2 = v;
    } else if (const auto* g = std::get_if<Ginibre>(&wc.law)) {
      const double a = 0.5 * (d + s);
      if (!(a > 0.0)) return std::nullopt;
      const double lc = std::log(g->scale) + t;
      l = s * lc + 0.5 * s * std::numbers::ln2 + std::lgamma(a) - std::lgamma(0.5 * d);
      l1 = lc + 0.5 * std::numbers::ln2 + 0.5 * boost::math::digamma(a);
      l2 = 0.25 * boost::math::trigamma(a);
    } else if (const auto* c = std::get_if<ScalarConstant>(&wc.law)) {
      l = s * (c->log_c + t);
      l1 = c->log_c + t;
    } else if (std::holds_alternative<Orthogonal>(wc.law)) {
      l = s * t;
      l1 = t;
    } else if (const auto* a2 = std::get_if<ScalarTwoAtom>(&wc.law)) {
      const double la = a2->log_a + t, lb = a2->log_b + t;
      const double ea = a2->p_a * std::exp(s * la), eb = (1.0 - a2->p_a) * std::exp(s * lb);
      kk = ea + eb;
      kk1 = ea * la + eb * lb;
      kk2 = ea * la * la + eb * lb * lb;
      direct = true;
    } else {
      return std::nullopt;
    }
    if (!direct) {
      kk = std::exp(l);
      kk1 = kk * l1;
      kk2 = kk * (l2 + l1 * l1);
    }
    k0 += wc.weight * kk;
    k1 += wc.weight * kk1;
    k2 += wc.weight * kk2;
  }
  ClosedForm cf;
  cf.lambda = std::log(k0);
  cf.d1 = k1 / k0;
  cf.d2 = k2 / k0 - cf.d1 * cf.d1;
  return cf;
}

const ScalarLognormal* single_lognormal(const MatrixLaw& law) {
  if (law.dim() != 1 || law.components().size() != 1) return nullptr;
  return std::get_if<ScalarLognormal>(&law.components().front().law);
}

// ---------------------------------------------------------------- shared walk setup

struct WalkSetup {
  BranchingModel model;
  std::shared_ptr<SpectralEngine> engine;
  SpectralData data;
  std::optional<BoundaryCalibration> cal;
};

WalkSetup walk_setup(const ExperimentConfig& c) {
  WalkSetup w;
  if (c.calibrate) {
    const SpectralEngine base(c.model, c.spectral);
    w.cal = base.calibrate_boundary(c.sign);
    w.model = calibrated_model(c.model, *w.cal);
    w.engine = std::make_shared<SpectralEngine>(w.model, c.spectral);
    w.data = w.engine->leading_eigen(w.cal->s);
  } else {
    w.model = c.model;
    w.engine = std::make_shared<SpectralEngine>(w.model, c.spectral);
    w.data = w.engine->leading_eigen(c.s_values.at(0));
  }
  return w;
}

Measure measure_of(const ExperimentConfig& c) { return c.measure == "dual" ? Measure::Dual : Measure::Changed; }

void describe_setup(Context& ctx, const WalkSetup& w, const WalkKernel& k) {
  ctx.params["s"] = w.data.s;
  ctx.params["tilt"] = w.data.tilt;
  ctx.params["sigma"] = k.sigma();
  ctx.params["sampler"] = to_string(k.sampler());
  ctx.params["candidates"] = ctx.cfg.walk.candidates;
  ctx.params["spectral_method"] = to_string(w.data.method);
  ctx.params["grid"] = w.data.grid.size();
  ctx.params["reps"] = ctx.cfg.reps;
  ctx.params["measure"] = ctx.cfg.measure;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Asymptotic standard error of a sample median.
double median_se(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  RunningStats st;
  for (double x : v) st.add(x);
  return 1.2533 * std::sqrt(st.variance() / static_cast<double>(v.size()));
}

double binom_half(int n) {
  // C(2n, n) / 4^n
  double p = 1.0;
  for (int k = 1; k <= n; ++k) p *= (2.0 * k - 1.0) / (2.0 * k);
  return p;
}

// ---------------------------------------------------------------- experiments

void exp_spectral(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const SpectralEngine eng(c.model, c.spectral);
  const bool quad = eng.method() == SpectralMethod::Quadrature;
  ctx.params["method"] = to_string(eng.method());
  ctx.params["grid"] = eng.grid().size();
  ctx.params["pool"] = eng.approx() ? eng.approx()->pool_size() : 0;
  Csv csv{{"s", "kappa", "kappa_se", "lambda", "dlambda", "d2lambda", "sigma2", "kappa_oracle", "d2lambda_oracle",
           "kappa_rel_error"},
          {}};
  const double tol = quad ? 1e-3 : 1e-2;
  bool first = true;
  for (double s : c.s_values) {
    const SpectralData d = eng.leading_eigen(s);
    if (first) {
      ctx.files.emplace_back("spectral.json", spectral_to_json(d));
      ctx.out.artifacts.push_back("spectral.json");
      first = false;
    }
    const auto cf = closed_form(eng.model().matrices, s);
    std::optional<double> ko, d2o, rel;
    if (cf) {
      ko = std::exp(cf->lambda);
      d2o = cf->d2;
      rel = std::abs(d.kappa - *ko) / *ko;
      std::ostringstream det;
      det << "s=" << s << " kappa=" << d.kappa << " oracle=" << *ko << " rel=" << *rel << " tol=" << tol;
      ctx.check("kappa_oracle(s=" + num(s) + ")", *rel <= tol, det.str());
      std::ostringstream det2;
      det2 << "d2lambda=" << d.d2lambda << " oracle=" << *d2o;
      ctx.check("d2lambda_oracle(s=" + num(s) + ")", std::abs(d.d2lambda - *d2o) <= 5e-2, det2.str());
    }
    csv.add({num(s), num(d.kappa), num(d.kappa_se), num(d.lambda), num(d.dlambda), num(d.d2lambda), num(d.sigma2),
             opt(ko), opt(d2o), opt(rel)});
    ctx.headline("kappa(s=" + num(s) + ")", {d.kappa, d.kappa_se});
  }
  ctx.write("spectral.csv", csv);

  if (eng.model().offspring.mean() > 1.0) {
    Csv g{{"sign", "gamma", "gamma_se", "s_star", "interior", "foc_residual", "gamma_oracle"}, {}};
    const ScalarLognormal* ln = single_lognormal(eng.model().matrices);
    for (int sign : {1, -1}) {
      const std::string name = sign > 0 ? "gamma_plus" : "gamma_minus";
      try {
        const GammaResult gr = eng.gamma(sign);
        std::optional<double> oracle;
        if (ln) {
          const double mu = ln->mean + eng.model().matrices.tilt();
          oracle = mu + sign * ln->sd * std::sqrt(2.0 * std::log(eng.model().offspring.mean()));
          ctx.check(name + "_oracle", std::abs(gr.value - *oracle) <= 1e-3,
                    "value=" + num(gr.value) + " oracle=" + num(*oracle));
        }
        g.add({std::to_string(sign), num(gr.value), num(gr.se), num(gr.s_star), gr.interior ? "1" : "0",
               num(gr.foc_residual), opt(oracle)});
        ctx.headline(name, {gr.value, gr.se});
      } catch (const Error& e) {
        g.add({std::to_string(sign), "", "", "", "0", "", ""});
        ctx.params[name + "_error"] = e.what();
      }
    }
    ctx.write("gamma.csv", g);
  }
}

void exp_calibrate(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const SpectralEngine eng(c.model, c.spectral);
  ctx.params["method"] = to_string(eng.method());
  Csv csv{{"sign", "exponent", "s", "tilt", "sigma", "residual_mass", "residual_derivative", "iterations",
           "exponent_oracle", "tilt_oracle", "sigma_oracle"},
          {}};
  const ScalarLognormal* ln = single_lognormal(c.model.matrices);
  const int signs[2] = {c.sign, -c.sign};
  for (int sign : signs) {
    const BoundaryCalibration cal = eng.calibrate_boundary(sign);
    std::optional<double> eo, to, so;
    const std::string tag = sign > 0 ? "alpha" : "beta";
    if (ln) {
      const double L = std::log(c.model.offspring.mean());
      eo = std::sqrt(2.0 * L) / ln->sd;
      to = -ln->mean - sign * *eo * ln->sd * ln->sd;
      so = ln->sd;
      ctx.check(tag + "_oracle", std::abs(cal.exponent - *eo) <= 1e-3,
                "value=" + num(cal.exponent) + " oracle=" + num(*eo));
      ctx.check(tag + "_tilt_oracle", std::abs(cal.tilt - *to) <= 1e-3,
                "value=" + num(cal.tilt) + " oracle=" + num(*to));
      ctx.check(tag + "_sigma_oracle", std::abs(cal.sigma - *so) <= 2e-2,
                "value=" + num(cal.sigma) + " oracle=" + num(*so));
    }
    ctx.check(tag + "_residuals", std::abs(cal.residual_mass) < 1e-3 && std::abs(cal.residual_derivative) < 1e-3,
              "mass=" + num(cal.residual_mass) + " derivative=" + num(cal.residual_derivative));
    csv.add({std::to_string(sign), num(cal.exponent), num(cal.s), num(cal.tilt), num(cal.sigma),
             num(cal.residual_mass), num(cal.residual_derivative), std::to_string(cal.newton_iterations), opt(eo),
             opt(to), opt(so)});
    ctx.headline(tag, {cal.exponent, 0.0});
    ctx.headline(tag + "_tilt", {cal.tilt, 0.0});
  }
  ctx.write("calibrate.csv", csv);
}

void exp_walk_clt(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const WalkSetup w = walk_setup(c);
  const WalkKernel k(w.model, w.data, c.walk);
  describe_setup(ctx, w, k);
  const int d = c.model.dim();
  const int n = c.ns.empty() ? (d == 1 ? 400 : 256) : c.ns.front();
  const double y = c.ys.empty() ? 1.0 : c.ys.front();
  const double ks_max = c.ks_max.value_or(d == 1 ? 0.02 : 0.05);
  const Vec x = start_direction(c);
  const ConditionedLaw law = conditioned_cdf(k, measure_of(c), x, y, n, c.reps, ctx.rng(1));
  Csv cdf{{"t", "empirical", "rayleigh"}, {}};
  for (int i = 0; i <= 80; ++i) {
    const double t = 0.05 * i;
    cdf.add({num(t), num(law.empirical_cdf(t)), num(rayleigh_cdf(t))});
  }
  ctx.write("walk_clt_cdf.csv", cdf);
  Csv sum{{"n", "y", "trials", "survivors", "ks", "ks_uncertainty", "ks_max"}, {}};
  sum.add({std::to_string(n), num(y), std::to_string(law.trials), std::to_string(law.survivors), num(law.ks),
           num(law.ks_uncertainty), num(ks_max)});
  ctx.write("walk_clt.csv", sum);
  ctx.check("ks", law.ks < ks_max, "ks=" + num(law.ks) + " survivors=" + std::to_string(law.survivors));
  ctx.headline("ks", {law.ks, law.ks_uncertainty});
}

void exp_walk_exit(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const WalkSetup w = walk_setup(c);
  const WalkKernel k(w.model, w.data, c.walk);
  describe_setup(ctx, w, k);
  const std::vector<int> ns = c.ns.empty() ? std::vector<int>{64, 128, 256, 512} : c.ns;
  const std::vector<double> ys = c.ys.empty() ? std::vector<double>{0.5, 2.0, 8.0} : c.ys;
  const Vec x = start_direction(c);
  const auto rows = exit_probability(k, measure_of(c), x, ys, ns, c.reps, ctx.rng(2));
  // Under Q_alpha a d = 1 lognormal law has centered Gaussian increments.
  const bool symmetric = c.calibrate && single_lognormal(w.model.matrices) != nullptr;
  Csv csv{{"experiment", "n", "y", "estimate", "stderr", "scaled", "scaled_stderr", "oracle", "z"}, {}};
  bool oracle_ok = true, have_oracle = false;
  double smin = kInf, smax = 0.0;
  int scaled_rows = 0;
  for (const auto& r : rows) {
    std::optional<double> oracle, z;
    if (symmetric && r.y == 0.0) {
      oracle = binom_half(r.n);
      z = (r.probability.value - *oracle) / r.probability.se;
      have_oracle = true;
      oracle_ok = oracle_ok && std::abs(*z) <= c.z_max;
    }
    if (r.y > 0.0) {
      smin = std::min(smin, r.scaled.value);
      smax = std::max(smax, r.scaled.value);
      ++scaled_rows;
    }
    csv.add({c.name, std::to_string(r.n), num(r.y), num(r.probability.value), num(r.probability.se),
             num(r.scaled.value), num(r.scaled.se), opt(oracle), opt(z)});
    ctx.headline("P(n=" + std::to_string(r.n) + ",y=" + num(r.y) + ")", r.probability);
  }
  ctx.write("walk_exit.csv", csv);
  if (have_oracle) ctx.check("sparre_andersen", oracle_ok, "all |z| <= " + num(c.z_max));
  if (scaled_rows >= 2)
    ctx.check("exit_scaling", smax / smin <= 2.0, "max/min of sqrt(n) P/(1+y) = " + num(smax / smin));
}

void exp_walk_llt(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const WalkSetup w = walk_setup(c);
  const WalkKernel k(w.model, w.data, c.walk);
  describe_setup(ctx, w, k);
  const std::vector<int> ns = c.ns.empty() ? std::vector<int>{64, 128, 256} : c.ns;
  const std::vector<double> ys = c.ys.empty() ? std::vector<double>{1.0, 4.0} : c.ys;
  ctx.params["a"] = c.a;
  ctx.params["b"] = c.b;
  const Vec x = start_direction(c);
  const auto rows = local_probability(k, measure_of(c), x, ys, ns, c.a, c.b, c.reps, ctx.rng(3));
  Csv csv{{"experiment", "n", "y", "a", "b", "estimate", "stderr", "exit_probability", "scaled", "scaled_y",
           "scaled_y_stderr"},
          {}};
  double lo = kInf, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.scaled_y.value);
    hi = std::max(hi, r.scaled_y.value);
    csv.add({c.name, std::to_string(r.n), num(r.y), num(r.a), num(r.b), num(r.probability.value),
             num(r.probability.se), num(r.exit_probability.value), num(r.scaled.value), num(r.scaled_y.value),
             num(r.scaled_y.se)});
    ctx.headline("local(n=" + std::to_string(r.n) + ",y=" + num(r.y) + ")", r.scaled_y);
  }
  ctx.write("walk_local.csv", csv);
  if (rows.size() >= 2)
    ctx.check("local_scaling", hi / lo <= 1.5, "max/min of n^1.5 P/(1+y) = " + num(hi / lo));

  SeparableFunction h;
  h.fx = [](const Vec&) { return 1.0; };
  h.fu = [](double u) { return normal_pdf(u); };
  const auto llt = llt_unconditioned(k, x, 0.0, ns, h, c.reps, ctx.rng(4));
  Csv l{{"experiment", "n", "lhs", "lhs_stderr", "rhs", "error"}, {}};
  for (const auto& r : llt) {
    l.add({c.name, std::to_string(r.n), num(r.lhs.value), num(r.lhs.se), num(r.rhs), num(r.error)});
    ctx.headline("llt(n=" + std::to_string(r.n) + ")", r.lhs);
  }
  ctx.write("walk_llt.csv", l);
  if (!llt.empty())
    ctx.check("llt_error", llt.back().error < 0.05, "error at n=" + std::to_string(llt.back().n) + ": " +
                                                        num(llt.back().error));
}

std::function<double(const Vec&)> angle_indicator(int d, const std::vector<double>& range) {
  if (d != 2) return [](const Vec&) { return 1.0; };
  const double lo = range[0], hi = range[1];
  return [lo, hi](const Vec& x) {
    const double a = projective_angle(x);
    return (a >= lo && a < hi) ? 1.0 : 0.0;
  };
}

void exp_duality(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const WalkSetup w = walk_setup(c);
  const WalkKernel k(w.model, w.data, c.walk);
  describe_setup(ctx, w, k);
  const int d = c.model.dim();
  const std::vector<int> ns = c.ns.empty() ? std::vector<int>{1, 3, 5} : c.ns;
  BoxFunction phi{angle_indicator(d, c.phi_angle), c.phi_y[0], c.phi_y[1]};
  BoxFunction psi{angle_indicator(d, c.psi_angle), c.psi_y[0], c.psi_y[1]};
  Csv csv{{"experiment", "n", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "z"}, {}};
  for (int n : ns) {
    const DualityResult r = verify_duality(k, n, phi, psi, c.reps, ctx.rng(100 + static_cast<std::uint64_t>(n)));
    csv.add({c.name, std::to_string(n), num(r.lhs.value), num(r.lhs.se), num(r.rhs.value), num(r.rhs.se),
             num(r.z)});
    ctx.check("duality(n=" + std::to_string(n) + ")", std::abs(r.z) <= c.z_max, "z=" + num(r.z));
    ctx.headline("duality_lhs(n=" + std::to_string(n) + ")", r.lhs);
  }
  ctx.write("duality.csv", csv);
}

void exp_martingale(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const WalkSetup w = walk_setup(c);
  const WalkKernel k(w.model, w.data, c.walk);
  describe_setup(ctx, w, k);
  const int n = c.ns.empty() ? 200 : c.ns.front();
  const CohomologicalSolution sol = w.engine->solve_cohomological(w.data);
  const Vec x = start_direction(c);
  const MartingaleReport rep = martingale_gap(k, sol, x, n, c.reps, ctx.rng(5));
  Csv t{{"node", "theta", "sigma_bar"}, {}};
  for (std::size_t i = 0; i < sol.theta.size(); ++i) t.add({std::to_string(i), num(sol.theta[i]), num(sol.sigma_bar[i])});
  ctx.write("theta.csv", t);
  Csv csv{{"n", "reps", "max_gap", "bound", "theta_sup", "max_identity_error", "max_gap_first_half",
           "max_gap_second_half", "increment_mean", "increment_stderr", "residual", "centering", "terms"},
          {}};
  csv.add({std::to_string(n), std::to_string(rep.reps), num(rep.max_gap), num(rep.bound), num(rep.theta_sup),
           num(rep.max_identity_error), num(rep.max_gap_first_half), num(rep.max_gap_second_half),
           num(rep.martingale_increment_mean.value), num(rep.martingale_increment_mean.se), num(sol.residual),
           num(sol.centering), std::to_string(sol.terms)});
  ctx.write("martingale.csv", csv);
  ctx.check("gap_bound", rep.bound_ok, "max gap " + num(rep.max_gap) + " vs 2 sup|theta| " + num(rep.bound));
  ctx.check("gap_identity", rep.max_identity_error <= 1e-9, "max deviation " + num(rep.max_identity_error));
  ctx.check("cohomological_residual", sol.residual <= 1e-8, "residual " + num(sol.residual));
  ctx.headline("max_gap", {rep.max_gap, 0.0});
  ctx.headline("increment_mean", rep.martingale_increment_mean);
}

void exp_many_to_one(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const WalkSetup w = walk_setup(c);
  const WalkKernel k(w.model, w.data, c.walk);
  describe_setup(ctx, w, k);
  ctx.params["tree_reps"] = c.tree_reps;
  const int d = c.model.dim();
  std::vector<int> ns = c.ns;
  if (ns.empty())
    for (int n = 1; n <= (d == 1 ? 10 : 6); ++n) ns.push_back(n);
  const Vec x = start_direction(c);
  const bool one = c.test_function == "one";
  const std::function<double(const Vec&, double)> h = one ? [](const Vec&, double) { return 1.0; }
                                                           : [](const Vec&, double u) { return u >= 0.0 ? 1.0 : 0.0; };
  ctx.params["h"] = c.test_function;
  const double mean = w.model.offspring.mean();
  Csv csv{{"experiment", "n", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "oracle", "z", "z_rhs_oracle"}, {}};
  for (int n : ns) {
    const ManyToOneResult r =
        many_to_one_check(w.model, k, x, n, h, c.tree_reps, c.reps, ctx.rng(200 + static_cast<std::uint64_t>(n)));
    std::optional<double> oracle, zo;
    if (one) {
      oracle = std::pow(mean, n);
      zo = r.rhs.se > 0.0 ? (r.rhs.value - *oracle) / r.rhs.se : 0.0;
    }
    csv.add({c.name, std::to_string(n), num(r.lhs.value), num(r.lhs.se), num(r.rhs.value), num(r.rhs.se),
             opt(oracle), num(r.z), opt(zo)});
    ctx.check("many_to_one(n=" + std::to_string(n) + ")", std::abs(r.z) <= c.z_max, "z=" + num(r.z));
    ctx.headline("rhs(n=" + std::to_string(n) + ")", r.rhs);
  }
  ctx.write("many_to_one.csv", csv);
}

struct TreeStats {
  std::vector<int> n;
  std::vector<std::vector<double>> max;  // [checkpoint][tree]
  std::vector<std::vector<double>> min;
  std::size_t attempts = 0;
  std::size_t survivors = 0;
};

TreeStats grow_trees(const ExperimentConfig& c, const BranchingModel& model, const std::vector<int>& checkpoints,
                     const RandomStream& root) {
  TreeStats ts;
  ts.n = checkpoints;
  ts.max.resize(checkpoints.size());
  ts.min.resize(checkpoints.size());
  SimulationOptions opts;
  opts.x = start_direction(c);
  opts.n_max = *std::max_element(checkpoints.begin(), checkpoints.end());
  opts.population_cap = c.population_cap;
  opts.strict = true;
  const DirectionSet a = c.set.build(model.dim());
  const std::size_t max_attempts = 20 * c.trees;
  while (ts.survivors < c.trees) {
    if (ts.attempts >= max_attempts)
      fail(ErrorCode::TooFewSurvivors, "only " + std::to_string(ts.survivors) + " surviving trees in " +
                                           std::to_string(ts.attempts) + " attempts");
    const SimulationResult res = simulate(model, opts, root.child(ts.attempts++));
    if (!res.survived()) continue;
    ++ts.survivors;
    const ExtremalSeries s = extremal(res, a);
    for (std::size_t j = 0; j < checkpoints.size(); ++j) {
      const auto idx = static_cast<std::size_t>(checkpoints[j] - 1);
      ts.max[j].push_back(s.max[idx]);
      ts.min[j].push_back(s.min[idx]);
    }
  }
  return ts;
}

void exp_brw_lln(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const SpectralEngine eng(c.model, c.spectral);
  const GammaResult gp = eng.gamma(1);
  std::optional<GammaResult> gm;
  try {
    gm = eng.gamma(-1);
  } catch (const Error&) {
  }
  ctx.params["trees"] = c.trees;
  ctx.params["n_max"] = c.n_max;
  ctx.params["set"] = c.set.kind;
  std::vector<int> cps;
  for (int n = 1; n <= c.n_max; ++n) cps.push_back(n);
  const TreeStats ts = grow_trees(c, c.model, cps, ctx.rng(6));
  ctx.params["attempts"] = ts.attempts;
  Csv csv{{"n", "trees", "mean_max_over_n", "stderr", "median_max_over_n", "mean_min_over_n", "gamma_plus",
           "gamma_minus"},
          {}};
  Estimate last;
  for (std::size_t j = 0; j < cps.size(); ++j) {
    RunningStats mx, mn;
    std::vector<double> v;
    for (double m : ts.max[j]) {
      mx.add(m / cps[j]);
      v.push_back(m / cps[j]);
    }
    for (double m : ts.min[j]) mn.add(m / cps[j]);
    csv.add({std::to_string(cps[j]), std::to_string(ts.max[j].size()), num(mx.mean()), num(mx.stderr_mean()),
             num(median(v)), num(mn.mean()), num(gp.value), gm ? num(gm->value) : ""});
    last = to_estimate(mx);
  }
  ctx.write("brw_lln.csv", csv);
  const bool ok = last.value >= gp.value - 0.30 && last.value <= gp.value + 0.05;
  ctx.check("lln_window", ok, "mean M_n/n = " + num(last.value) + " at n=" + std::to_string(c.n_max) +
                                  ", window [" + num(gp.value - 0.30) + ", " + num(gp.value + 0.05) + "]");
  ctx.headline("mean_max_over_n", last);
}

void exp_brw_boundary(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const std::vector<int> cps = c.ns.empty() ? std::vector<int>{10, 15, 20} : c.ns;
  ctx.params["trees"] = c.trees;
  ctx.params["checkpoints"] = cps;
  Csv csv{{"extreme", "n", "trees", "median", "median_stderr", "median_over_log_n", "prediction_over_log_n"}, {}};
  const SpectralEngine base(c.model, c.spectral);
  for (int sign : {1, -1}) {
    const BoundaryCalibration cal = base.calibrate_boundary(sign);
    const BranchingModel model = calibrated_model(c.model, cal);
    const TreeStats ts = grow_trees(c, model, cps, ctx.rng(sign > 0 ? 7 : 8));
    const std::string ext = sign > 0 ? "max" : "min";
    const double pred = -sign * 1.5 / cal.exponent;
    std::vector<double> med;
    double last_ratio = 0.0;
    for (std::size_t j = 0; j < cps.size(); ++j) {
      const auto& v = sign > 0 ? ts.max[j] : ts.min[j];
      const double m = median(v);
      med.push_back(m);
      last_ratio = m / std::log(static_cast<double>(cps[j]));
      csv.add({ext, std::to_string(cps[j]), std::to_string(v.size()), num(m), num(median_se(v)), num(last_ratio),
               num(pred)});
      ctx.headline("median_" + ext + "(n=" + std::to_string(cps[j]) + ")", {m, median_se(v)});
    }
    bool sign_ok = true, mono = true;
    for (std::size_t j = 0; j < med.size(); ++j) {
      sign_ok = sign_ok && sign * med[j] < 0.0;
      if (j) mono = mono && sign * (med[j] - med[j - 1]) < 0.0;
    }
    const std::string what = sign > 0 ? "M_n" : "m_n";
    ctx.check(ext + "_median_sign", sign_ok, "median " + what + (sign > 0 ? " < 0" : " > 0") + " at every checkpoint");
    ctx.check(ext + "_median_trend", mono, "median " + what + (sign > 0 ? " decreasing" : " increasing") + " in n");
    const bool window = sign > 0 ? (last_ratio >= -3.0 && last_ratio <= -0.4) : (last_ratio >= 0.4 && last_ratio <= 3.0);
    ctx.check(ext + "_log_window", window, "median/log n = " + num(last_ratio) + ", prediction " + num(pred));
  }
  ctx.write("brw_boundary.csv", csv);
}

void exp_brw_variants(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const int d = c.model.dim();
  const int n_max = c.n_max;
  ctx.params["runs"] = c.trees;
  ctx.params["n_max"] = n_max;
  SimulationOptions opts;
  opts.x = start_direction(c);
  opts.n_max = n_max;
  opts.population_cap = c.population_cap;
  opts.track_variants = true;
  opts.strict = true;
  const DirectionSet a = c.set.build(d);
  Csv csv{{"run", "n", "population", "hits", "max_position", "max_coeff", "max_vector_norm", "max_opnorm",
           "max_specrad", "ordered"},
          {}};
  std::size_t gens = 0, ordered = 0;
  const RandomStream root = ctx.rng(9);
  for (std::size_t run = 0; run < c.trees; ++run) {
    const SimulationResult res = simulate(c.model, opts, root.child(run));
    const ExtremalSeries pos = extremal(res, a);
    const VariantSeries vs = variant_extremal(res, a);
    for (std::size_t j = 0; j < vs.ordered.size(); ++j) {
      if (vs.opnorm.hits[j] == 0) continue;
      ++gens;
      ordered += vs.ordered[j] ? 1 : 0;
      csv.add({std::to_string(run), std::to_string(pos.n[j]), std::to_string(pos.population[j]),
               std::to_string(pos.hits[j]), num(pos.max[j]), num(vs.coeff.max[j]), num(vs.vector_norm.max[j]),
               num(vs.opnorm.max[j]), num(vs.specrad.max[j]), vs.ordered[j] ? "1" : "0"});
    }
  }
  ctx.write("brw_variants.csv", csv);
  ctx.check("variant_ordering", gens > 0 && ordered == gens,
            std::to_string(ordered) + " of " + std::to_string(gens) + " generations ordered");
}

void exp_first_moment(Context& ctx) {
  const ExperimentConfig& c = ctx.cfg;
  const WalkSetup w = walk_setup(c);
  const WalkKernel k(w.model, w.data, c.walk);
  describe_setup(ctx, w, k);
  const std::vector<int> ns = c.ns.empty() ? std::vector<int>{64, 128, 256} : c.ns;
  FirstMomentOptions fo;
  fo.sign = c.sign;
  fo.epsilon = c.epsilon;
  fo.barrier = c.barrier;
  ctx.params["epsilon"] = c.epsilon;
  ctx.params["barrier"] = json_num(c.barrier);
  const Vec x = start_direction(c);
  const auto rows = first_moment_tail(k, w.model.offspring.mean(), x, ns, fo, c.reps, ctx.rng(10));
  Csv csv{{"experiment", "n", "threshold", "barrier", "expected_count", "stderr"}, {}};
  bool dec = true;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const auto& r = rows[j];
    csv.add({c.name, std::to_string(r.n), num(r.threshold), num(r.barrier), num(r.expected_count.value),
             num(r.expected_count.se)});
    if (j) dec = dec && r.expected_count.value < rows[j - 1].expected_count.value;
    ctx.headline("EZ(n=" + std::to_string(r.n) + ")", r.expected_count);
  }
  ctx.write("first_moment.csv", csv);
  if (rows.size() >= 2) ctx.check("first_moment_decay", dec, "E Z_n strictly decreasing over the n list");
}

using Runner = void (*)(Context&);

const std::vector<std::pair<std::string, Runner>>& registry() {
  static const std::vector<std::pair<std::string, Runner>> r = {
      {"spectral", exp_spectral},         {"calibrate", exp_calibrate},   {"walk-clt", exp_walk_clt},
      {"walk-exit", exp_walk_exit},       {"walk-llt", exp_walk_llt},     {"duality", exp_duality},
      {"martingale", exp_martingale},     {"many-to-one", exp_many_to_one}, {"brw-lln", exp_brw_lln},
      {"brw-boundary", exp_brw_boundary}, {"brw-variants", exp_brw_variants}, {"first-moment", exp_first_moment},
  };
  return r;
}

struct Executed {
  ExperimentOutcome outcome;
  std::vector<std::pair<std::string, std::string>> files;
};

Executed execute(const ExperimentConfig& c) {
  Context ctx{c, {}, {}, json::object()};
  ctx.params["seed"] = c.seed;
  Runner fn = nullptr;
  for (const auto& [name, f] : registry())
    if (name == c.name) fn = f;
  if (!fn) fail(ErrorCode::ConfigError, "unknown experiment '" + c.name + "'");
  if (c.threads) set_thread_count(c.threads);
  try {
    fn(ctx);
  } catch (const Error& e) {
    ctx.out.error = c.name + ": " + e.what();
  }
  return {std::move(ctx.out), std::move(ctx.files)};
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) fail(ErrorCode::IoError, "cannot write " + tmp.string());
    os << content;
    if (!os) fail(ErrorCode::IoError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

double resolved_knob(const ExperimentConfig& c, const std::string& knob) {
  const int d = c.model.dim();
  if (knob == "K") return c.spectral.grid_size ? c.spectral.grid_size : default_grid(d);
  if (knob == "M") return static_cast<double>(c.spectral.pool_size ? c.spectral.pool_size : default_pool(d));
  if (knob == "W") return c.walk.candidates;
  return static_cast<double>(c.reps);
}

ExperimentConfig scaled_config(const ExperimentConfig& c, const std::string& knob, double f) {
  ExperimentConfig s = c;
  const double v = std::round(resolved_knob(c, knob) * f);
  if (knob == "K") s.spectral.grid_size = static_cast<int>(v);
  else if (knob == "M") s.spectral.pool_size = static_cast<std::size_t>(v);
  else if (knob == "W") s.walk.candidates = static_cast<int>(v);
  else {
    s.reps = static_cast<std::size_t>(v);
    s.tree_reps = static_cast<std::size_t>(std::round(static_cast<double>(c.tree_reps) * f));
  }
  return s;
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [n, f] : registry()) {
      (void)f;
      v.push_back(n);
    }
    return v;
  }();
  return names;
}

DirectionSet DirectionSetSpec::build(int d) const {
  if (kind == "full") return DirectionSet::full();
  if (kind == "angle") {
    if (d != 2) fail(ErrorCode::ConfigError, "angle sets need d = 2");
    return DirectionSet::angle_interval(theta1, theta2);
  }
  if (static_cast<int>(center.size()) != d) fail(ErrorCode::ConfigError, "cap center must have length d");
  Vec v(d);
  for (int i = 0; i < d; ++i) v(i) = center[static_cast<std::size_t>(i)];
  return DirectionSet::cap(ProjPoint(v), radius);
}

bool ExperimentOutcome::pass() const {
  if (error) return false;
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

bool SweepTable::pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.pass; });
}

std::string git_blob_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, blob.data(), blob.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

ExperimentOutcome run_in_memory(const ExperimentConfig& config) { return execute(config).outcome; }

void write_manifest(const std::string& path, const RunManifest& m) {
  json j;
  j["experiment"] = m.experiment;
  j["config"] = m.config_echo;
  j["input_hash"] = m.input_hash;
  j["started"] = m.started;
  j["finished"] = m.finished;
  j["library_version"] = m.library_version;
  j["seed"] = m.seed;
  j["threads"] = m.threads;
  j["status"] = m.outcome.pass() ? "PASS" : "FAIL";
  j["checks"] = json::array();
  for (const auto& c : m.outcome.checks)
    j["checks"].push_back({{"name", c.name}, {"verdict", c.pass ? "PASS" : "FAIL"}, {"detail", c.detail}});
  j["headlines"] = json::array();
  for (const auto& h : m.outcome.headlines)
    j["headlines"].push_back({{"name", h.name}, {"value", json_num(h.value.value)}, {"se", json_num(h.value.se)}});
  j["artifacts"] = m.outcome.artifacts;
  j["error"] = m.outcome.error ? json(*m.outcome.error) : json(nullptr);
  atomic_write(path, j.dump(2) + "\n");
}

RunManifest run(const ExperimentConfig& config) {
  RunManifest m;
  m.experiment = config.name;
  m.config_echo = config.source;
  m.input_hash = git_blob_hash(config.source + "\n# effective seed " + std::to_string(config.seed) + "\n");
  m.seed = config.seed;
  m.started = utc_now();
  Executed ex = execute(config);
  m.threads = thread_count();
  const std::filesystem::path dir(config.out);
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : ex.files) atomic_write(dir / name, text);
  m.outcome = std::move(ex.outcome);
  m.finished = utc_now();
  write_manifest((dir / "manifest.json").string(), m);
  return m;
}

SweepTable resolution_sweep(const ExperimentConfig& config, const std::string& knob,
                            const std::vector<double>& factors) {
  if (knob != "K" && knob != "M" && knob != "W" && knob != "reps")
    fail(ErrorCode::ConfigError, "sweep knob must be one of K, M, W, reps");
  SweepTable t;
  t.knob = knob;
  t.factors = factors;
  const ExperimentOutcome base = run_in_memory(config);
  if (base.error) fail(ErrorCode::InvalidArgument, "base run failed: " + *base.error);
  for (double f : factors) {
    if (!(f > 0.0)) fail(ErrorCode::ConfigError, "sweep factors must be positive");
    if (f == 1.0) continue;
    const ExperimentOutcome o = run_in_memory(scaled_config(config, knob, f));
    if (o.error) fail(ErrorCode::InvalidArgument, "run at factor " + num(f) + " failed: " + *o.error);
    for (const auto& hb : base.headlines) {
      const auto it = std::find_if(o.headlines.begin(), o.headlines.end(),
                                   [&](const Headline& h) { return h.name == hb.name; });
      if (it == o.headlines.end()) continue;
      SweepRow r;
      r.headline = hb.name;
      r.factor = f;
      r.base = hb.value;
      r.value = it->value;
      if (knob == "reps") {
        if (!(hb.value.se > 0.0) || !(it->value.se > 0.0)) continue;
        r.drift = hb.value.se / it->value.se;
        const double root = std::sqrt(f);
        r.allowance = root;
        r.pass = r.drift >= root * 1.2 / std::numbers::sqrt2 && r.drift <= root * 1.7 / std::numbers::sqrt2;
      } else {
        r.drift = std::abs(it->value.value - hb.value.value);
        r.allowance = 2.0 * std::hypot(hb.value.se, it->value.se);
        r.pass = r.allowance > 0.0 ? r.drift < r.allowance : r.drift <= 1e-12 * std::max(1.0, std::abs(hb.value.value));
      }
      t.rows.push_back(r);
    }
  }
  return t;
}

void write_sweep_csv(const std::string& path, const SweepTable& t) {
  std::ostringstream os;
  json h;
  h["knob"] = t.knob;
  h["factors"] = t.factors;
  os << "# " << h.dump() << "\n";
  os << "headline,factor,base,base_se,value,value_se,drift,allowance,pass\n";
  for (const auto& r : t.rows)
    os << r.headline << "," << num(r.factor) << "," << num(r.base.value) << "," << num(r.base.se) << ","
       << num(r.value.value) << "," << num(r.value.se) << "," << num(r.drift) << "," << num(r.allowance) << ","
       << (r.pass ? "PASS" : "FAIL") << "\n";
  atomic_write(path, os.str());
}

}  // namespace matbrw
