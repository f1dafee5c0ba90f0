#include "hsdiff/equilibrium.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "hsdiff/error.hpp"
#include "occupancy_grid.hpp"

namespace hsdiff {

double GasParameters::packing_fraction() const {
  return static_cast<double>(n) * unit_ball_volume(geom.dim) * std::pow(eps, geom.dim) /
         geom.volume();
}

double GasParameters::density_factor() const {
  return static_cast<double>(n) * std::pow(eps, geom.dim - 1) / geom.volume();
}

void GasParameters::validate() const {
  if (geom.dim != 2 && geom.dim != 3) throw ConfigError("dimension must be 2 or 3");
  if (!(geom.side >= 1.0)) throw ConfigError("torus side lambda must be >= 1");
  if (n < 2) throw ConfigError("particle count N must be >= 2");
  if (!(eps > 0.0)) throw ConfigError("diameter eps must be positive");
  if (!(eps < geom.side / 4.0)) throw ConfigError("diameter eps must satisfy eps < lambda/4");
  if (!(beta > 0.0)) throw ConfigError("inverse temperature beta must be positive");
  if (!(packing_fraction() < 0.3)) {
    throw ConfigError("packing fraction N*V_d*eps^d/lambda^d must be < 0.3 (got " +
                      std::to_string(packing_fraction()) + ")");
  }
}

TaggedWeight unit_weight() {
  TaggedWeight w;
  w.evaluate = [](const Vec&, const Vec&) { return 1.0; };
  w.bound = 1.0;
  w.lipschitz_constant = 0.0;
  w.normalization_checked = true;
  return w;
}

namespace {

double maxwellian_norm(int d, double beta) {
  return std::pow(beta / (2.0 * std::numbers::pi), 0.5 * d);
}

double bump(double s, double cutoff) {
  if (s >= cutoff) return 0.0;
  const double u = 1.0 - (s / cutoff) * (s / cutoff);
  return u * u;
}

}  // namespace

TaggedWeight cosine_bump_weight(const CosineBumpSpec& spec, const TorusGeometry& geom,
                                double beta) {
  require(std::abs(spec.amplitude) < 1.0, "cosine amplitude must satisfy |a| < 1");
  require(spec.velocity_cutoff >= 0.0, "velocity cutoff must be nonnegative");
  require(beta > 0.0, "beta must be positive");
  const int d = geom.dim;
  double kx = 0.0;
  for (int k = 0; k < d; ++k) kx += spec.wavevector[k] * spec.wavevector[k];
  const double kmag = std::sqrt(kx);

  double gnorm = 1.0;
  double gslope = 0.0;
  if (spec.velocity_cutoff > 0.0) {
    const double s = spec.velocity_cutoff;
    const double area = unit_sphere_area(d);
    const double mnorm = maxwellian_norm(d, beta);
    auto integrand = [&](double r) {
      return area * std::pow(r, d - 1) * mnorm * std::exp(-0.5 * beta * r * r) * bump(r, s);
    };
    const double integral =
        boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 0.0, s, 15, 1e-13);
    gnorm = 1.0 / integral;
    gslope = gnorm * (4.0 / s) * (2.0 / (3.0 * std::sqrt(3.0)));
  }

  TaggedWeight w;
  const double a = spec.amplitude;
  const double side = geom.side;
  const auto kv = spec.wavevector;
  const double cutoff = spec.velocity_cutoff;
  w.evaluate = [=](const Vec& x, const Vec& v) {
    double phase = 0.0;
    for (int k = 0; k < d; ++k) phase += kv[k] * x[k];
    const double spatial = 1.0 + a * std::cos(2.0 * std::numbers::pi * phase / side);
    const double g = cutoff > 0.0 ? gnorm * bump(norm(v), cutoff) : 1.0;
    return spatial * g;
  };
  w.bound = (1.0 + std::abs(a)) * gnorm;
  const double lx = std::abs(a) * 2.0 * std::numbers::pi * kmag / side * gnorm;
  const double lv = (1.0 + std::abs(a)) * gslope;
  w.lipschitz_constant = std::hypot(lx, lv);
  return w;
}

double check_normalization(TaggedWeight& weight, const TorusGeometry& geom, double beta) {
  Rng rng(0x5eedf00dULL);
  std::uniform_real_distribution<double> uni(0.0, geom.side);
  constexpr int kDraws = 200000;
  double sum = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    Vec x;
    for (int k = 0; k < geom.dim; ++k) x[k] = uni(rng);
    const Vec v = sample_maxwellian(beta, geom.dim, rng);
    const double w = weight.evaluate(x, v);
    if (w < 0.0 || w > weight.bound * (1.0 + 1e-12)) {
      throw Error("tagged weight outside [0, bound]");
    }
    sum += w;
  }
  const double m = sum / kDraws;
  if (std::abs(m - 1.0) > 0.01) {
    throw Error("tagged weight is not normalized (mean " + std::to_string(m) + ")");
  }
  weight.normalization_checked = true;
  return m;
}

Vec sample_maxwellian(double beta, int d, Rng& rng) {
  if (!(beta > 0.0)) throw Error("beta must be positive");
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(beta));
  Vec v;
  for (int k = 0; k < d; ++k) v[k] = g(rng);
  return v;
}

std::vector<Vec> sample_positions(const GasParameters& params, Rng& rng,
                                  PositionSamplerStats* stats) {
  params.geom.validate();
  require(params.n >= 1, "need at least one particle");
  require(params.eps > 0.0 && params.eps < params.geom.side / 4.0, "eps must be in (0, side/4)");
  require(params.packing_fraction() < 0.3, "packing fraction must be below 0.3");

  const auto& geom = params.geom;
  const double eps = params.eps;
  std::uniform_real_distribution<double> uni(0.0, geom.side);
  auto draw = [&] {
    Vec x;
    for (int k = 0; k < geom.dim; ++k) x[k] = uni(rng);
    return x;
  };

  std::vector<Vec> pos;
  pos.reserve(params.n);
  detail::OccupancyGrid grid(geom, eps);
  auto clear_of = [&](const Vec& x, std::uint32_t skip) {
    bool ok = true;
    grid.for_each_near(x, [&](std::uint32_t j) {
      if (j != skip && ok && torus_distance(x, pos[j], geom) <= eps) ok = false;
    });
    return ok;
  };

  PositionSamplerStats local;
  constexpr std::size_t kMaxAttempts = 1000000;
  for (std::size_t i = 0; i < params.n; ++i) {
    std::size_t attempts = 0;
    while (true) {
      if (++attempts > kMaxAttempts) throw Error("density too high");
      const Vec x = draw();
      if (clear_of(x, UINT32_MAX)) {
        pos.push_back(x);
        grid.insert(static_cast<std::uint32_t>(i), x);
        break;
      }
    }
    local.insertion_attempts += attempts;
  }

  if (params.packing_fraction() >= 0.01) {
    local.used_metropolis = true;
    std::uniform_int_distribution<std::size_t> pick(0, params.n - 1);
    std::uniform_real_distribution<double> step(-2.0 * eps, 2.0 * eps);
    const std::size_t moves = 50 * params.n;
    for (std::size_t m = 0; m < moves; ++m) {
      const auto i = static_cast<std::uint32_t>(pick(rng));
      Vec disp;
      do {
        for (int k = 0; k < geom.dim; ++k) disp[k] = step(rng);
      } while (norm(disp) > 2.0 * eps);
      const Vec trial = reduce(pos[i] + disp, geom);
      if (clear_of(trial, i)) {
        grid.erase(i, pos[i]);
        pos[i] = trial;
        grid.insert(i, trial);
        ++local.metropolis_accepted;
      }
    }
    local.metropolis_moves = moves;
  }
  if (stats) *stats = local;
  return pos;
}

Configuration sample_equilibrium(const GasParameters& params, Rng& rng) {
  Configuration conf;
  const auto pos = sample_positions(params, rng);
  conf.states.reserve(pos.size());
  for (const auto& x : pos) {
    conf.states.push_back({x, sample_maxwellian(params.beta, params.geom.dim, rng)});
  }
  return conf;
}

Configuration sample_tagged_initial(const GasParameters& params,
                                    const TaggedWeight& weight, Rng& rng,
                                    TaggedSamplerStats* stats) {
  require(static_cast<bool>(weight.evaluate), "tagged weight has no evaluator");
  require(weight.bound >= 1.0, "tagged weight bound must be >= 1 for a normalized weight");
  if (1.0 / weight.bound < 1e-4) throw Error("weight too peaked");
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  constexpr std::size_t kMaxTrials = 100000;
  for (std::size_t trial = 1; trial <= kMaxTrials; ++trial) {
    Configuration conf = sample_equilibrium(params, rng);
    const auto& z = conf.states.front();
    if (uni(rng) * weight.bound < weight.evaluate(z.position, z.velocity)) {
      if (stats) stats->trials = trial;
      return conf;
    }
  }
  throw Error("weight too peaked");
}

bool validate_exclusion(const Configuration& conf, double eps, const TorusGeometry& geom) {
  detail::OccupancyGrid grid(geom, eps);
  bool ok = true;
  for (std::size_t i = 0; i < conf.states.size() && ok; ++i) {
    const Vec x = reduce(conf.states[i].position, geom);
    grid.for_each_near(x, [&](std::uint32_t j) {
      if (ok && torus_distance(x, reduce(conf.states[j].position, geom), geom) <= eps) ok = false;
    });
    grid.insert(static_cast<std::uint32_t>(i), x);
  }
  return ok;
}

void write_snapshot(std::ostream& os, const Configuration& conf,
                    const GasParameters& params) {
  const int d = params.geom.dim;
  os << std::setprecision(17);
  os << conf.states.size() << ' ' << d << ' ' << params.geom.side << ' ' << params.eps << ' '
     << params.beta << ' ' << params.seed << '\n';
  for (const auto& z : conf.states) {
    for (int k = 0; k < d; ++k) os << z.position[k] << ' ';
    for (int k = 0; k < d; ++k) os << z.velocity[k] << (k + 1 < d ? ' ' : '\n');
  }
}

Configuration read_snapshot(std::istream& is, GasParameters* params) {
  std::string header;
  if (!std::getline(is, header)) throw Error("snapshot: missing header");
  std::istringstream hs(header);
  GasParameters p;
  std::size_t n = 0;
  if (!(hs >> n >> p.geom.dim >> p.geom.side >> p.eps >> p.beta >> p.seed)) {
    throw Error("snapshot: malformed header");
  }
  p.n = n;
  if (p.geom.dim != 2 && p.geom.dim != 3) throw Error("snapshot: bad dimension");
  Configuration conf;
  conf.states.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < p.geom.dim; ++k) is >> conf.states[i].position[k];
    for (int k = 0; k < p.geom.dim; ++k) is >> conf.states[i].velocity[k];
    if (!is) throw Error("snapshot: truncated particle records");
  }
  if (params) *params = p;
  return conf;
}

}  // namespace hsdiff
