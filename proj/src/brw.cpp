// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/brw.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "matbrw/error.hpp"
#include "matbrw/parallel.hpp"

namespace matbrw {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::size_t kParentGrain = 1024;

Vec unit_or_e1(const Vec& v, int d) {
  if (v.size() == 0) return Vec::Unit(d, 0);
  if (v.size() != d) fail(ErrorCode::InvalidArgument, "coefficient vector has the wrong dimension");
  const double n = v.norm();
  if (!(n > 0.0)) fail(ErrorCode::InvalidArgument, "coefficient vector must be nonzero");
  return v / n;
}

}  // namespace

// ---------------------------------------------------------------- direction sets

double projective_angle(const Vec& x) {
  double a = std::atan2(x(1), x(0));
  if (a < 0.0) a += std::numbers::pi;
  if (a >= std::numbers::pi) a -= std::numbers::pi;
  return a;
}

DirectionSet DirectionSet::full() { return DirectionSet{}; }

DirectionSet DirectionSet::angle_interval(double theta1, double theta2) {
  if (!(theta1 >= 0.0 && theta1 < theta2 && theta2 <= std::numbers::pi))
    fail(ErrorCode::InvalidArgument, "angle interval needs 0 <= theta1 < theta2 <= pi");
  DirectionSet a;
  a.kind_ = Kind::AngleInterval;
  a.a_ = theta1;
  a.b_ = theta2;
  return a;
}

DirectionSet DirectionSet::cap(const ProjPoint& center, double radius) {
  if (center.dim() < 2) fail(ErrorCode::InvalidArgument, "caps need d >= 2");
  if (!(radius > 0.0 && radius <= 1.0)) fail(ErrorCode::InvalidArgument, "cap radius must lie in (0, 1]");
  DirectionSet a;
  a.kind_ = Kind::Cap;
  a.b_ = radius;
  a.center_ = center;
  return a;
}

bool DirectionSet::contains(const Vec& x) const {
  switch (kind_) {
    case Kind::Full: return true;
    case Kind::AngleInterval: {
      if (x.size() != 2) fail(ErrorCode::InvalidArgument, "angle intervals apply to d = 2");
      const double t = projective_angle(x);
      return t >= a_ && t < b_;
    }
    case Kind::Cap: {
      if (x.size() != center_.dim()) fail(ErrorCode::InvalidArgument, "cap and direction dimensions differ");
      const double c = std::min(1.0, std::abs(center_.direction().dot(x)) / x.norm());
      return std::sqrt(std::max(0.0, 1.0 - c * c)) < b_;
    }
  }
  return false;
}

double DirectionSet::nu_mass(const SpectralData& data) const {
  double m = 0.0, total = 0.0;
  for (int i = 0; i < data.grid.size(); ++i) {
    const double w = data.nu[static_cast<std::size_t>(i)];
    total += w;
    if (contains(data.grid.node(i))) m += w;
  }
  return total > 0.0 ? m / total : 0.0;
}

std::string DirectionSet::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::Full: os << "full"; break;
    case Kind::AngleInterval: os << "angle[" << a_ << "," << b_ << ")"; break;
    case Kind::Cap: os << "cap(r=" << b_ << ")"; break;
  }
  return os.str();
}

Vec GenerationRecord::direction_at(std::size_t i) const {
  Vec x(dim);
  for (int k = 0; k < dim; ++k) x(k) = direction[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)];
  return x;
}

std::string to_string(SimulationStatus s) {
  switch (s) {
    case SimulationStatus::Completed: return "completed";
    case SimulationStatus::Extinct: return "extinct";
    case SimulationStatus::CapExceeded: return "cap_exceeded";
  }
  return "?";
}

// ---------------------------------------------------------------- simulation

SimulationResult simulate(const BranchingModel& model, const SimulationOptions& options, const RandomStream& rng) {
  if (options.n_max < 1) fail(ErrorCode::InvalidArgument, "n_max must be >= 1");
  if (options.population_cap < 1) fail(ErrorCode::InvalidArgument, "population_cap must be >= 1");
  const int d = model.dim();
  if (options.x.size() != d) fail(ErrorCode::InvalidArgument, "start direction has the wrong dimension");
  const auto du = static_cast<std::size_t>(d);
  const bool variants = options.track_variants;
  const Vec f = unit_or_e1(options.f, d);
  const Vec v = unit_or_e1(options.v, d);

  SimulationResult res;
  res.root_key = rng.key();
  GenerationRecord root;
  root.generation = 0;
  root.dim = d;
  Vec x0 = options.x / options.x.norm();
  canonicalize(x0);
  root.parent = {0};
  root.child_rank = {0};
  root.position = {0.0};
  root.direction.assign(x0.data(), x0.data() + d);
  std::vector<ScaledProduct> products;
  if (variants) {
    root.has_variants = true;
    products.assign(1, ScaledProduct(d));
    root.log_coeff = {products[0].log_coeff(f, v)};
    root.log_vector_norm = {0.0};
    root.log_norm = {0.0};
    root.log_specrad = {0.0};
  }
  res.generations.push_back(std::move(root));

  for (int n = 1; n <= options.n_max; ++n) {
    const GenerationRecord& prev = res.generations.back();
    const std::size_t np = prev.size();
    const RandomStream gen_rng = rng.child(static_cast<std::uint64_t>(n));
    std::vector<std::size_t> offset(np + 1, 0);
    parallel_for(np, kParentGrain, [&](std::size_t b, std::size_t e) {
      for (std::size_t p = b; p < e; ++p) {
        RandomStream r = gen_rng.child(p);
        offset[p + 1] = model.offspring.sample(r);
      }
    });
    for (std::size_t p = 0; p < np; ++p) offset[p + 1] += offset[p];
    const std::size_t total = offset[np];
    if (total > options.population_cap) {
      res.status = SimulationStatus::CapExceeded;
      res.offending_generation = n;
      if (options.strict)
        fail(ErrorCode::PopulationCapExceeded,
             "generation " + std::to_string(n) + " would hold " + std::to_string(total) + " particles");
      break;
    }
    GenerationRecord next;
    next.generation = n;
    next.dim = d;
    next.parent.resize(total);
    next.child_rank.resize(total);
    next.position.resize(total);
    next.direction.resize(total * du);
    std::vector<ScaledProduct> next_products;
    if (variants) {
      next.has_variants = true;
      next.log_coeff.resize(total);
      next.log_vector_norm.resize(total);
      next.log_norm.resize(total);
      next.log_specrad.resize(total);
      next_products.resize(total);
    }
    parallel_for(np, kParentGrain, [&](std::size_t b, std::size_t e) {
      Vec x(d);
      for (std::size_t p = b; p < e; ++p) {
        RandomStream r = gen_rng.child(p);
        const unsigned count = model.offspring.sample(r);
        const Vec xp = prev.direction_at(p);
        for (unsigned j = 0; j < count; ++j) {
          const std::size_t i = offset[p] + j;
          const Mat g = model.matrices.sample(r);
          x = xp;
          const double inc = move_direction(g, x);
          next.parent[i] = static_cast<std::uint32_t>(p);
          next.child_rank[i] = j;
          next.position[i] = prev.position[p] + inc;
          for (std::size_t k = 0; k < du; ++k) next.direction[i * du + k] = x(static_cast<Eigen::Index>(k));
          if (variants) {
            ScaledProduct prod = products[p];
            prod.left_multiply(g);
            next.log_coeff[i] = prod.log_coeff(f, v);
            next.log_vector_norm[i] = prod.log_vector_norm(v);
            next.log_norm[i] = prod.log_norm();
            next.log_specrad[i] = prod.log_specrad();
            next_products[i] = std::move(prod);
          }
        }
      }
    });
    products = std::move(next_products);
    const bool empty = total == 0;
    res.generations.push_back(std::move(next));
    res.last_generation = n;
    if (empty) {
      res.status = SimulationStatus::Extinct;
      break;
    }
  }
  return res;
}

std::vector<std::uint32_t> ulam_harris(const SimulationResult& result, int n, std::size_t i) {
  if (n < 0 || n >= static_cast<int>(result.generations.size()))
    fail(ErrorCode::OutOfRange, "generation not recorded");
  std::vector<std::uint32_t> label(static_cast<std::size_t>(n));
  for (int k = n; k >= 1; --k) {
    const GenerationRecord& g = result.generations[static_cast<std::size_t>(k)];
    if (i >= g.size()) fail(ErrorCode::OutOfRange, "particle index out of range");
    label[static_cast<std::size_t>(k - 1)] = g.child_rank[i];
    i = g.parent[i];
  }
  return label;
}

double cocycle_spot_check(const BranchingModel& model, const SimulationResult& result, std::size_t samples,
                          RandomStream& rng) {
  double worst = 0.0;
  const int last = static_cast<int>(result.generations.size()) - 1;
  if (last < 1) return 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(last)));
    const GenerationRecord& g = result.generations[static_cast<std::size_t>(n)];
    if (g.size() == 0) continue;
    const std::size_t i = rng.below(g.size());
    const std::size_t p = g.parent[i];
    RandomStream r = RandomStream::from_key(result.root_key).child(static_cast<std::uint64_t>(n)).child(p);
    const unsigned count = model.offspring.sample(r);
    Mat m;
    for (unsigned j = 0; j <= g.child_rank[i] && j < count; ++j) m = model.matrices.sample(r);
    const GenerationRecord& pg = result.generations[static_cast<std::size_t>(n - 1)];
    const double expected = cocycle(Matrix::trusted(m), ProjPoint(pg.direction_at(p)));
    worst = std::max(worst, std::abs(g.position[i] - pg.position[p] - expected));
  }
  return worst;
}

// ---------------------------------------------------------------- extremal positions

std::vector<double> ExtremalSeries::max_over_n() const {
  std::vector<double> out(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) out[i] = max[i] / n[i];
  return out;
}

std::vector<double> ExtremalSeries::min_over_n() const {
  std::vector<double> out(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) out[i] = min[i] / n[i];
  return out;
}

std::vector<double> ExtremalSeries::max_over_log_n() const {
  std::vector<double> out(n.size());
  for (std::size_t i = 0; i < n.size(); ++i)
    out[i] = n[i] >= 2 ? max[i] / std::log(static_cast<double>(n[i])) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::vector<double> ExtremalSeries::min_over_log_n() const {
  std::vector<double> out(n.size());
  for (std::size_t i = 0; i < n.size(); ++i)
    out[i] = n[i] >= 2 ? min[i] / std::log(static_cast<double>(n[i])) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

namespace {

void scan(const GenerationRecord& g, const DirectionSet& a, const std::vector<double>& values, ExtremalSeries& s) {
  double hi = -kInf, lo = kInf;
  std::size_t hits = 0;
  const bool full = a.kind() == DirectionSet::Kind::Full;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!full && !a.contains(g.direction_at(i))) continue;
    ++hits;
    hi = std::max(hi, values[i]);
    lo = std::min(lo, values[i]);
  }
  s.n.push_back(g.generation);
  s.population.push_back(g.size());
  s.hits.push_back(hits);
  s.max.push_back(hi);
  s.min.push_back(lo);
}

}  // namespace

ExtremalSeries extremal(const SimulationResult& result, const DirectionSet& a) {
  ExtremalSeries s;
  for (std::size_t k = 1; k < result.generations.size(); ++k) {
    const GenerationRecord& g = result.generations[k];
    scan(g, a, g.position, s);
  }
  return s;
}

bool VariantSeries::all_ordered() const {
  return std::all_of(ordered.begin(), ordered.end(), [](bool b) { return b; });
}

VariantSeries variant_extremal(const SimulationResult& result, const DirectionSet& a) {
  VariantSeries out;
  if (result.generations.empty() || !result.generations.front().has_variants)
    fail(ErrorCode::VariantsNotTracked, "simulate ran without track_variants");
  constexpr double tol = 1e-9;
  for (std::size_t k = 1; k < result.generations.size(); ++k) {
    const GenerationRecord& g = result.generations[k];
    scan(g, a, g.log_coeff, out.coeff);
    scan(g, a, g.log_vector_norm, out.vector_norm);
    scan(g, a, g.log_norm, out.opnorm);
    scan(g, a, g.log_specrad, out.specrad);
    const double c = out.coeff.max.back(), vn = out.vector_norm.max.back(), on = out.opnorm.max.back(),
                 sr = out.specrad.max.back();
    out.ordered.push_back(c <= vn + tol && vn <= on + tol && sr <= on + tol);
  }
  return out;
}

// ---------------------------------------------------------------- many-to-one and first moment

ManyToOneResult many_to_one_check(const BranchingModel& model, const WalkKernel& kernel, const Vec& x, int n,
                                  const std::function<double(const Vec&, double)>& h, std::size_t tree_reps,
                                  std::size_t walk_reps, const RandomStream& rng) {
  if (n < 1 || n > 12) fail(ErrorCode::InvalidArgument, "many-to-one check supports 1 <= n <= 12");
  const BranchingModel tree_model{model.offspring, kernel.law()};
  const SpectralData& sd = kernel.spectral();
  SimulationOptions opts;
  opts.x = x;
  opts.n_max = n;
  opts.strict = true;
  const RandomStream tree_root = rng.child(0);
  struct Acc {
    RunningStats st;
    void merge(const Acc& o) { st.merge(o.st); }
  };
  auto tree_parts = map_chunks<Acc>(tree_reps, 16, [&](std::size_t b, std::size_t e) {
    Acc a;
    for (std::size_t i = b; i < e; ++i) {
      const SimulationResult res = simulate(tree_model, opts, tree_root.child(i));
      double sum = 0.0;
      if (static_cast<int>(res.generations.size()) > n) {
        const GenerationRecord& g = res.generations[static_cast<std::size_t>(n)];
        for (std::size_t j = 0; j < g.size(); ++j) sum += h(g.direction_at(j), g.position[j]);
      }
      a.st.add(sum);
    }
    return a;
  });
  Acc lhs;
  for (auto& p : tree_parts) lhs.merge(p);

  const double m = sd.kappa * model.offspring.mean();
  const double pref = kernel.r(x) * std::pow(m, n);
  const RandomStream walk_root = rng.child(1);
  auto walk_parts = map_chunks<Acc>(walk_reps, 512, [&](std::size_t b, std::size_t e) {
    Acc a;
    for (std::size_t i = b; i < e; ++i) {
      const RandomStream pr = walk_root.child(i);
      Vec cur = x;
      double s = 0.0;
      for (int k = 1; k <= n; ++k) {
        RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
        const WalkStep st = kernel.step_changed(cur, sr);
        s += st.increment;
        cur = st.x;
      }
      a.st.add(pref * h(cur, s) * std::exp(-sd.s * s) / kernel.r(cur));
    }
    return a;
  });
  Acc rhs;
  for (auto& p : walk_parts) rhs.merge(p);

  ManyToOneResult out;
  out.n = n;
  out.s = sd.s;
  out.lhs = to_estimate(lhs.st);
  out.rhs = to_estimate(rhs.st);
  out.z = z_score(out.lhs, out.rhs);
  return out;
}

std::vector<FirstMomentRow> first_moment_tail(const WalkKernel& kernel, double mean_offspring, const Vec& x,
                                              const std::vector<int>& ns, const FirstMomentOptions& options,
                                              std::size_t reps, const RandomStream& rng) {
  if (options.sign != 1 && options.sign != -1) fail(ErrorCode::InvalidArgument, "sign must be +1 or -1");
  const SpectralData& sd = kernel.spectral();
  if (sd.s == 0.0) fail(ErrorCode::InvalidArgument, "first-moment bound needs a nonzero tilt parameter");
  const double sg = options.sign;
  const double m = sd.kappa * mean_offspring;
  const double rx = kernel.r(x);
  std::vector<FirstMomentRow> rows;
  for (std::size_t j = 0; j < ns.size(); ++j) {
    const int n = ns[j];
    if (n < 2) fail(ErrorCode::InvalidArgument, "first-moment rows need n >= 2");
    const double thr = options.fixed_threshold
                           ? options.threshold
                           : (-1.5 / std::abs(sd.s) + options.epsilon) * std::log(static_cast<double>(n));
    const double pref = rx * std::pow(m, n);
    const RandomStream root = rng.child(j);
    struct Acc {
      RunningStats st;
      void merge(const Acc& o) { st.merge(o.st); }
    };
    auto parts = map_chunks<Acc>(reps, 512, [&](std::size_t b, std::size_t e) {
      Acc a;
      for (std::size_t i = b; i < e; ++i) {
        const RandomStream pr = root.child(i);
        Vec cur = x;
        double s = 0.0;
        bool alive = true;
        for (int k = 1; k <= n; ++k) {
          RandomStream sr = pr.child(static_cast<std::uint64_t>(k));
          const WalkStep st = kernel.step_changed(cur, sr);
          s += st.increment;
          cur = st.x;
          if (sg * s > options.barrier) {
            alive = false;
            break;
          }
        }
        a.st.add(alive && sg * s >= thr ? pref * std::exp(-sd.s * s) / kernel.r(cur) : 0.0);
      }
      return a;
    });
    Acc acc;
    for (auto& p : parts) acc.merge(p);
    rows.push_back({n, thr, options.barrier, to_estimate(acc.st)});
  }
  return rows;
}

// ---------------------------------------------------------------- output

namespace {
std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}
}  // namespace

void write_generation_csv(std::ostream& out, const SimulationResult& result, const DirectionSet& a) {
  const ExtremalSeries s = extremal(result, a);
  const bool variants = !result.generations.empty() && result.generations.front().has_variants;
  VariantSeries vs;
  if (variants) vs = variant_extremal(result, a);
  out << "n,population,hits,M_n,m_n";
  if (variants) out << ",coeff_max,vector_norm_max,opnorm_max,specrad_max";
  out << "\n";
  for (std::size_t i = 0; i < s.n.size(); ++i) {
    out << s.n[i] << "," << s.population[i] << "," << s.hits[i] << "," << fmt(s.max[i]) << "," << fmt(s.min[i]);
    if (variants)
      out << "," << fmt(vs.coeff.max[i]) << "," << fmt(vs.vector_norm.max[i]) << "," << fmt(vs.opnorm.max[i]) << ","
          << fmt(vs.specrad.max[i]);
    out << "\n";
  }
}

namespace {

constexpr char kMagic[8] = {'M', 'A', 'T', 'B', 'R', 'W', 'G', 'N'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U u = std::bit_cast<U>(v);
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <class T>
T get(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) fail(ErrorCode::IoError, "truncated generation file");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(b[i]) << (8 * i);
  return std::bit_cast<T>(u);
}

template <class T>
void put_array(std::ostream& os, const std::vector<T>& v) {
  for (const T& x : v) put<T>(os, x);
}

template <class T>
std::vector<T> get_array(std::istream& is, std::size_t n) {
  std::vector<T> v(n);
  for (auto& x : v) x = get<T>(is);
  return v;
}

}  // namespace

void write_generations(const std::string& path, const SimulationResult& result) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path);
  const bool variants = !result.generations.empty() && result.generations.front().has_variants;
  const int d = result.generations.empty() ? 1 : result.generations.front().dim;
  os.write(kMagic, 8);
  put<std::uint32_t>(os, kVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  put<std::uint32_t>(os, variants ? 1u : 0u);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(result.generations.size()));
  for (const auto& g : result.generations) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(g.generation));
    put<std::uint64_t>(os, g.size());
    put_array(os, g.parent);
    put_array(os, g.child_rank);
    put_array(os, g.position);
    put_array(os, g.direction);
    if (variants) {
      put_array(os, g.log_coeff);
      put_array(os, g.log_vector_norm);
      put_array(os, g.log_norm);
      put_array(os, g.log_specrad);
    }
  }
  if (!os) fail(ErrorCode::IoError, "write failed for " + path);
}

std::vector<GenerationRecord> read_generations(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kMagic)) fail(ErrorCode::IoError, "not a generation file");
  if (get<std::uint32_t>(is) != kVersion) fail(ErrorCode::IoError, "unsupported generation file version");
  const int d = static_cast<int>(get<std::uint32_t>(is));
  const bool variants = (get<std::uint32_t>(is) & 1u) != 0;
  const std::uint32_t count = get<std::uint32_t>(is);
  std::vector<GenerationRecord> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    GenerationRecord g;
    g.dim = d;
    g.generation = static_cast<int>(get<std::uint32_t>(is));
    const auto n = static_cast<std::size_t>(get<std::uint64_t>(is));
    g.parent = get_array<std::uint32_t>(is, n);
    g.child_rank = get_array<std::uint32_t>(is, n);
    g.position = get_array<double>(is, n);
    g.direction = get_array<double>(is, n * static_cast<std::size_t>(d));
    g.has_variants = variants;
    if (variants) {
      g.log_coeff = get_array<double>(is, n);
      g.log_vector_norm = get_array<double>(is, n);
      g.log_norm = get_array<double>(is, n);
      g.log_specrad = get_array<double>(is, n);
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace matbrw
