// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#define TOML_HEADER_ONLY 1
#include <toml.hpp>

#include "matbrw/error.hpp"
#include "matbrw/experiments.hpp"

namespace matbrw {
namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  fail(ErrorCode::ConfigError, where + ": " + what);
}

void check_keys(const toml::table& t, const std::string& where, std::initializer_list<const char*> allowed) {
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : t) {
    (void)v;
    const std::string key(k.str());
    if (!ok.count(key)) bad(where, "unknown key '" + key + "'");
  }
}

const toml::table* sub(const toml::table& t, const char* key, const std::string& where) {
  const toml::node* n = t.get(key);
  if (!n) return nullptr;
  const toml::table* tt = n->as_table();
  if (!tt) bad(where + "." + key, "expected a table");
  return tt;
}

double get_double(const toml::table& t, const char* key, const std::string& where, double def) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  if (auto v = n->value_exact<double>()) return *v;
  if (auto v = n->value_exact<std::int64_t>()) return static_cast<double>(*v);
  if (auto s = n->value_exact<std::string>()) {
    if (*s == "inf") return std::numeric_limits<double>::infinity();
    if (*s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  bad(where + "." + key, "expected a number");
}

std::int64_t get_int(const toml::table& t, const char* key, const std::string& where, std::int64_t def,
                     std::int64_t lo = std::numeric_limits<std::int64_t>::min()) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  std::int64_t v = 0;
  if (auto i = n->value_exact<std::int64_t>()) v = *i;
  else if (auto d = n->value_exact<double>(); d && *d == std::floor(*d) && std::abs(*d) < 9e15)
    v = static_cast<std::int64_t>(*d);
  else bad(where + "." + key, "expected an integer");
  if (v < lo) bad(where + "." + key, "must be >= " + std::to_string(lo));
  return v;
}

bool get_bool(const toml::table& t, const char* key, const std::string& where, bool def) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  if (auto v = n->value_exact<bool>()) return *v;
  bad(where + "." + key, "expected a boolean");
}

std::string get_string(const toml::table& t, const char* key, const std::string& where, const std::string& def,
                       std::initializer_list<const char*> choices = {}) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  auto v = n->value_exact<std::string>();
  if (!v) bad(where + "." + key, "expected a string");
  if (choices.size()) {
    bool found = false;
    for (const char* c : choices) found = found || *v == c;
    if (!found) bad(where + "." + key, "unsupported value '" + *v + "'");
  }
  return *v;
}

std::vector<double> get_doubles(const toml::table& t, const char* key, const std::string& where,
                                std::vector<double> def) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  const toml::array* a = n->as_array();
  if (!a) bad(where + "." + key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& e : *a) {
    if (auto v = e.value_exact<double>()) out.push_back(*v);
    else if (auto i = e.value_exact<std::int64_t>()) out.push_back(static_cast<double>(*i));
    else bad(where + "." + key, "expected an array of numbers");
  }
  return out;
}

std::vector<int> get_ints(const toml::table& t, const char* key, const std::string& where, std::vector<int> def) {
  const toml::node* n = t.get(key);
  if (!n) return def;
  const toml::array* a = n->as_array();
  if (!a) bad(where + "." + key, "expected an array of integers");
  std::vector<int> out;
  for (const auto& e : *a) {
    auto v = e.value_exact<std::int64_t>();
    if (!v || *v < 1) bad(where + "." + key, "expected an array of positive integers");
    out.push_back(static_cast<int>(*v));
  }
  return out;
}

std::vector<double> pair(const toml::table& t, const char* key, const std::string& where, std::vector<double> def) {
  auto v = get_doubles(t, key, where, std::move(def));
  if (v.size() != 2 || !(v[0] < v[1])) bad(where + "." + key, "expected [lo, hi] with lo < hi");
  return v;
}

OffspringLaw parse_offspring(const toml::table& t, const std::string& where) {
  check_keys(t, where, {"kind", "probabilities", "mean"});
  const std::string kind = get_string(t, "kind", where, "binary", {"binary", "explicit", "poisson", "geometric"});
  try {
    if (kind == "binary") return OffspringLaw::explicit_probabilities({0.0, 0.0, 1.0});
    if (kind == "explicit") {
      if (!t.get("probabilities")) bad(where, "explicit offspring law needs 'probabilities'");
      return OffspringLaw::explicit_probabilities(get_doubles(t, "probabilities", where, {}));
    }
    if (!t.get("mean")) bad(where, kind + " offspring law needs 'mean'");
    const double mean = get_double(t, "mean", where, 0.0);
    return kind == "poisson" ? OffspringLaw::poisson(mean) : OffspringLaw::geometric(mean);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    bad(where, e.what());
  }
}

WeightedComponent parse_component(const toml::table& t, const std::string& where) {
  const std::string kind = get_string(
      t, "kind", where, "", {"lognormal", "ginibre", "diag_rotation", "two_atom", "constant", "orthogonal"});
  if (kind.empty()) bad(where, "component needs 'kind'");
  WeightedComponent c;
  c.weight = get_double(t, "weight", where, 1.0);
  if (kind == "lognormal") {
    check_keys(t, where, {"kind", "weight", "mean", "sd"});
    ScalarLognormal l;
    l.mean = get_double(t, "mean", where, l.mean);
    l.sd = get_double(t, "sd", where, l.sd);
    c.law = l;
  } else if (kind == "ginibre") {
    check_keys(t, where, {"kind", "weight", "scale"});
    Ginibre g;
    g.scale = get_double(t, "scale", where, g.scale);
    c.law = g;
  } else if (kind == "diag_rotation") {
    check_keys(t, where, {"kind", "weight", "log_mean1", "log_mean2", "log_sd", "angle_sd"});
    DiagRotation r;
    r.log_mean1 = get_double(t, "log_mean1", where, r.log_mean1);
    r.log_mean2 = get_double(t, "log_mean2", where, r.log_mean2);
    r.log_sd = get_double(t, "log_sd", where, r.log_sd);
    r.angle_sd = get_double(t, "angle_sd", where, r.angle_sd);
    c.law = r;
  } else if (kind == "two_atom") {
    check_keys(t, where, {"kind", "weight", "log_a", "log_b", "p_a"});
    ScalarTwoAtom a;
    a.log_a = get_double(t, "log_a", where, a.log_a);
    a.log_b = get_double(t, "log_b", where, a.log_b);
    a.p_a = get_double(t, "p_a", where, a.p_a);
    c.law = a;
  } else if (kind == "constant") {
    check_keys(t, where, {"kind", "weight", "log_c"});
    ScalarConstant k;
    k.log_c = get_double(t, "log_c", where, k.log_c);
    c.law = k;
  } else {
    check_keys(t, where, {"kind", "weight"});
    c.law = Orthogonal{};
  }
  return c;
}

BranchingModel parse_model_table(const toml::table& t, const std::string& where) {
  check_keys(t, where, {"dim", "tilt", "offspring", "components"});
  const int d = static_cast<int>(get_int(t, "dim", where, 1, 1));
  const double tilt = get_double(t, "tilt", where, 0.0);
  BranchingModel m;
  if (const toml::table* o = sub(t, "offspring", where)) m.offspring = parse_offspring(*o, where + ".offspring");
  std::vector<WeightedComponent> comps;
  if (const toml::node* n = t.get("components")) {
    const toml::array* a = n->as_array();
    if (!a) bad(where + ".components", "expected an array of tables");
    int i = 0;
    for (const auto& e : *a) {
      const toml::table* ct = e.as_table();
      const std::string w = where + ".components[" + std::to_string(i++) + "]";
      if (!ct) bad(w, "expected a table");
      comps.push_back(parse_component(*ct, w));
    }
  }
  if (comps.empty()) comps.push_back({1.0, d == 1 ? LawComponent{ScalarLognormal{}} : LawComponent{Ginibre{}}});
  try {
    m.matrices = MatrixLaw(d, std::move(comps), tilt);
  } catch (const Error& e) {
    bad(where, e.what());
  }
  return m;
}

toml::table parse_text(const std::string& text, const std::string& origin) {
  try {
    return toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << e.description() << " (line " << e.source().begin.line << ")";
    bad(origin, os.str());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::ConfigError, "cannot read config file " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

BranchingModel parse_model(const std::string& toml_text, const std::string& origin) {
  const toml::table root = parse_text(toml_text, origin);
  const toml::table* m = sub(root, "model", origin);
  if (!m) bad(origin, "missing [model]");
  return parse_model_table(*m, "model");
}

BranchingModel load_model_file(const std::string& path) { return parse_model(read_file(path), path); }

ExperimentConfig parse_config(const std::string& toml_text, const std::string& origin) {
  const toml::table root = parse_text(toml_text, origin);
  check_keys(root, origin, {"experiment", "model", "spectral", "walk", "duality", "brw", "many_to_one", "first_moment", "checks"});
  ExperimentConfig c;
  c.source = toml_text;

  const toml::table* e = sub(root, "experiment", "experiment");
  if (!e) bad(origin, "missing [experiment]");
  check_keys(*e, "experiment", {"name", "seed", "out", "threads"});
  c.name = get_string(*e, "name", "experiment", "");
  const auto& names = experiment_names();
  if (std::find(names.begin(), names.end(), c.name) == names.end())
    bad("experiment.name", "unknown experiment '" + c.name + "'");
  c.seed = static_cast<std::uint64_t>(get_int(*e, "seed", "experiment", 1, 0));
  c.out = get_string(*e, "out", "experiment", c.out);
  c.threads = static_cast<unsigned>(get_int(*e, "threads", "experiment", 0, 0));

  if (const toml::table* m = sub(root, "model", "model")) c.model = parse_model_table(*m, "model");
  const int d = c.model.dim();

  if (const toml::table* s = sub(root, "spectral", "spectral")) {
    const std::string w = "spectral";
    check_keys(*s, w, {"method", "grid", "pool", "sampling", "tolerance", "max_iterations", "s_max", "s"});
    const std::string method = get_string(*s, "method", w, "auto", {"auto", "quadrature", "pool"});
    c.spectral.method = method == "auto"         ? SpectralMethod::Automatic
                        : method == "quadrature" ? SpectralMethod::Quadrature
                                                 : SpectralMethod::Pool;
    c.spectral.grid_size = static_cast<int>(get_int(*s, "grid", w, 0, 0));
    c.spectral.pool_size = static_cast<std::size_t>(get_int(*s, "pool", w, 0, 0));
    c.spectral.sampling =
        get_string(*s, "sampling", w, "stratified", {"stratified", "iid"}) == "iid" ? PoolSampling::Iid
                                                                                    : PoolSampling::Stratified;
    c.spectral.tolerance = get_double(*s, "tolerance", w, c.spectral.tolerance);
    c.spectral.max_iterations = static_cast<int>(get_int(*s, "max_iterations", w, c.spectral.max_iterations, 1));
    c.spectral.s_max = get_double(*s, "s_max", w, c.spectral.s_max);
    c.s_values = get_doubles(*s, "s", w, c.s_values);
  }
  c.spectral.seed = c.seed;

  if (const toml::table* s = sub(root, "walk", "walk")) {
    const std::string w = "walk";
    check_keys(*s, w,
               {"sampler", "candidates", "reps", "n", "y", "x", "calibrate", "sign", "measure", "horizon", "a", "b"});
    const std::string sampler = get_string(*s, "sampler", w, "auto", {"auto", "exact", "resample"});
    c.walk.sampler = sampler == "auto" ? SamplerKind::Automatic
                     : sampler == "exact" ? SamplerKind::Exact
                                          : SamplerKind::Resample;
    c.walk.candidates = static_cast<int>(get_int(*s, "candidates", w, c.walk.candidates, 1));
    c.reps = static_cast<std::size_t>(get_int(*s, "reps", w, static_cast<std::int64_t>(c.reps), 1));
    c.ns = get_ints(*s, "n", w, c.ns);
    c.ys = get_doubles(*s, "y", w, c.ys);
    c.x = get_doubles(*s, "x", w, c.x);
    c.calibrate = get_bool(*s, "calibrate", w, c.calibrate);
    c.sign = static_cast<int>(get_int(*s, "sign", w, c.sign));
    if (c.sign != 1 && c.sign != -1) bad("walk.sign", "must be 1 or -1");
    c.measure = get_string(*s, "measure", w, c.measure, {"changed", "dual"});
    c.horizon = static_cast<int>(get_int(*s, "horizon", w, c.horizon, 8));
    c.a = get_double(*s, "a", w, c.a);
    c.b = get_double(*s, "b", w, c.b);
    if (!(c.a >= 0.0 && c.b > c.a)) bad("walk", "need 0 <= a < b");
  }
  if (!c.x.empty() && static_cast<int>(c.x.size()) != d) bad("walk.x", "length must equal model.dim");

  if (const toml::table* s = sub(root, "duality", "duality")) {
    const std::string w = "duality";
    check_keys(*s, w, {"phi_angle", "phi_y", "psi_angle", "psi_y"});
    c.phi_angle = pair(*s, "phi_angle", w, c.phi_angle);
    c.phi_y = pair(*s, "phi_y", w, c.phi_y);
    c.psi_angle = pair(*s, "psi_angle", w, c.psi_angle);
    c.psi_y = pair(*s, "psi_y", w, c.psi_y);
  }

  if (const toml::table* s = sub(root, "brw", "brw")) {
    const std::string w = "brw";
    check_keys(*s, w, {"n_max", "trees", "population_cap", "track_variants", "set", "tree_reps"});
    c.n_max = static_cast<int>(get_int(*s, "n_max", w, c.n_max, 1));
    c.trees = static_cast<std::size_t>(get_int(*s, "trees", w, static_cast<std::int64_t>(c.trees), 1));
    c.population_cap =
        static_cast<std::size_t>(get_int(*s, "population_cap", w, static_cast<std::int64_t>(c.population_cap), 1));
    c.track_variants = get_bool(*s, "track_variants", w, c.track_variants);
    c.tree_reps = static_cast<std::size_t>(get_int(*s, "tree_reps", w, static_cast<std::int64_t>(c.tree_reps), 1));
    if (const toml::table* a = sub(*s, "set", w)) {
      const std::string ws = "brw.set";
      check_keys(*a, ws, {"kind", "theta1", "theta2", "center", "radius"});
      c.set.kind = get_string(*a, "kind", ws, "full", {"full", "angle", "cap"});
      c.set.theta1 = get_double(*a, "theta1", ws, 0.0);
      c.set.theta2 = get_double(*a, "theta2", ws, 0.0);
      c.set.center = get_doubles(*a, "center", ws, {});
      c.set.radius = get_double(*a, "radius", ws, 1.0);
      try {
        (void)c.set.build(d);
      } catch (const Error& err) {
        bad(ws, err.what());
      }
    }
  }

  if (const toml::table* s = sub(root, "many_to_one", "many_to_one")) {
    check_keys(*s, "many_to_one", {"h"});
    c.test_function = get_string(*s, "h", "many_to_one", c.test_function, {"one", "nonnegative"});
  }

  if (const toml::table* s = sub(root, "first_moment", "first_moment")) {
    const std::string w = "first_moment";
    check_keys(*s, w, {"epsilon", "barrier"});
    c.epsilon = get_double(*s, "epsilon", w, c.epsilon);
    c.barrier = get_double(*s, "barrier", w, c.barrier);
  }

  if (const toml::table* s = sub(root, "checks", "checks")) {
    check_keys(*s, "checks", {"ks_max", "z_max"});
    if (s->get("ks_max")) c.ks_max = get_double(*s, "ks_max", "checks", 0.0);
    c.z_max = get_double(*s, "z_max", "checks", c.z_max);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path), path); }

}  // namespace matbrw
