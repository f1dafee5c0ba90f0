#include "hsdiff/linear_boltzmann.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/bessel.hpp>

#include "hsdiff/error.hpp"
#include "hsdiff/stats.hpp"

namespace hsdiff {

namespace {

constexpr double kPi = std::numbers::pi;

void check_dim(int d) { require(d == 2 || d == 3, "dimension must be 2 or 3"); }

// exp(-x) I0(x)
double bessel_i0_scaled(double x) {
  if (x < 100.0) return boost::math::cyl_bessel_i(0, x) * std::exp(-x);
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < 30; ++k) {
    term *= (2.0 * k - 1.0) * (2.0 * k - 1.0) / (8.0 * k * x);
    sum += term;
    if (term < 1e-17) break;
  }
  return sum / std::sqrt(2.0 * kPi * x);
}

// Angular integral of exp(-beta |v + rho w|^2 / 2) over w in S^{d-1},
// divided by exp(-beta (s - rho)^2 / 2); x = beta s rho.
double angular_factor(int d, double x) {
  if (d == 2) return 2.0 * kPi * bessel_i0_scaled(x);
  if (x < 1e-8) return 4.0 * kPi * (1.0 - x);
  return 4.0 * kPi * (-std::expm1(-2.0 * x)) / (2.0 * x);
}

Vec random_unit(int d, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  while (true) {
    Vec w;
    for (int k = 0; k < d; ++k) w[k] = g(rng);
    const double r = norm(w);
    if (r > 1e-12) return w / r;
  }
}

// omega with density proportional to (u.omega)_+ on the sphere.
Vec sample_deflection(const Vec& u, int d, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double un = norm(u);
  const Vec e = un > 0.0 ? u / un : random_unit(d, rng);
  if (d == 2) {
    const double theta = std::asin(2.0 * uni(rng) - 1.0);
    const Vec perp{-e[1], e[0]};
    return std::cos(theta) * e + std::sin(theta) * perp;
  }
  const double c = std::sqrt(uni(rng));
  const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
  const double phi = 2.0 * kPi * uni(rng);
  // orthonormal frame around e
  const Vec a = std::abs(e[0]) < 0.9 ? Vec(1, 0, 0) : Vec(0, 1, 0);
  Vec p = a - dot(a, e) * e;
  p = p / norm(p);
  const Vec q{e[1] * p[2] - e[2] * p[1], e[2] * p[0] - e[0] * p[2], e[0] * p[1] - e[1] * p[0]};
  return c * e + s * (std::cos(phi) * p + std::sin(phi) * q);
}

// Draws v1 from M_beta(v1) (|v| + |v1|) / (|v| + E|v1|).
Vec sample_partner(const Vec& v, double beta, int d, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double s = norm(v);
  const double m = mean_speed(beta, d);
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(beta));
  if (uni(rng) * (s + m) < s) {
    Vec w;
    for (int k = 0; k < d; ++k) w[k] = g(rng);
    return w;
  }
  // radius with density r^d exp(-beta r^2 / 2): a chi_{d+1} variable
  double r2 = 0.0;
  for (int k = 0; k <= d; ++k) {
    const double z = g(rng);
    r2 += z * z;
  }
  return std::sqrt(r2) * random_unit(d, rng);
}

// One thinning candidate; empty when rejected.
std::optional<Vec> try_collision(const Vec& v, double beta, int d, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Vec v1 = sample_partner(v, beta, d, rng);
  const Vec u = v - v1;
  const double denom = norm(v) + norm(v1);
  if (denom <= 0.0 || uni(rng) * denom >= norm(u)) return std::nullopt;
  const Vec w = sample_deflection(u, d, rng);
  return v - dot(u, w) * w;
}

void put_f64(std::ostream& os, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  os.write(buf, 8);
}

double get_f64(std::istream& is) {
  char buf[8];
  if (!is.read(buf, 8)) throw Error("operator file truncated");
  std::uint64_t bits;
  std::memcpy(&bits, buf, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

std::vector<double> gauss_legendre_nodes(int n, std::vector<double>& weights) {
  std::vector<double> x(n);
  weights.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p0 = 1.0, p1 = z;
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[i] = z;
    weights[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return x;
}

}  // namespace

double kernel_constant(int d) {
  check_dim(d);
  return d == 2 ? 2.0 : kPi;
}

double mean_speed(double beta, int d) {
  check_dim(d);
  require(beta > 0.0, "beta must be positive");
  return d == 2 ? std::sqrt(kPi / (2.0 * beta)) : std::sqrt(8.0 / (kPi * beta));
}

double mean_collision_rate(double beta, int d) {
  // v - v1 is Maxwellian at inverse temperature beta / 2
  return kernel_constant(d) * mean_speed(beta / 2.0, d);
}

double total_jump_rate(const Vec& v, double beta, int d) {
  check_dim(d);
  if (!(beta > 0.0)) throw Error("beta must be positive");
  const double s = norm(v);
  auto f = [&](double rho) {
    const double gap = s - rho;
    return std::pow(rho, d) * std::exp(-0.5 * beta * gap * gap) * angular_factor(d, beta * s * rho);
  };
  const double upper = s + 14.0 / std::sqrt(beta);
  double err = 0.0;
  const double lo = std::max(0.0, s - 14.0 / std::sqrt(beta));
  double val = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, upper, 20,
                                                                               1e-13, &err);
  if (!std::isfinite(val) || err > 1e-9 * std::abs(val)) {
    throw Error("jump-rate quadrature did not converge (residual " + std::to_string(err) + ")");
  }
  return kernel_constant(d) * std::pow(beta / (2.0 * kPi), 0.5 * d) * val;
}

double equilibrium_collision_rate(double beta, int d) {
  check_dim(d);
  if (!(beta > 0.0)) throw Error("beta must be positive");
  auto f = [&](double s) {
    return total_jump_rate({s, 0.0, 0.0}, beta, d) * std::pow(s, d - 1) *
           std::exp(-0.5 * beta * s * s);
  };
  double err = 0.0;
  const double val = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      f, 0.0, 12.0 / std::sqrt(beta), 15, 1e-12, &err);
  return unit_sphere_area(d) * std::pow(beta / (2.0 * kPi), 0.5 * d) * val;
}

Vec sample_post_collision(const Vec& v, double beta, int d, Rng& rng) {
  check_dim(d);
  if (!(beta > 0.0)) throw Error("beta must be positive");
  for (int attempt = 0; attempt < 1000; ++attempt) {
    if (auto w = try_collision(v, beta, d, rng)) return *w;
  }
  throw Error("collision sampler acceptance below 1e-3");
}

Vec JumpTrajectory::position_at(double t) const {
  require(t >= 0.0 && t <= t_end, "time outside the trajectory");
  auto it = std::upper_bound(events.begin(), events.end(), t,
                             [](double s, const JumpEvent& e) { return s < e.time; });
  if (it == events.begin()) return x0 + t * v0;
  --it;
  return it->position + (t - it->time) * it->v_post;
}

Vec JumpTrajectory::velocity_at(double t) const {
  auto it = std::upper_bound(events.begin(), events.end(), t,
                             [](double s, const JumpEvent& e) { return s < e.time; });
  if (it == events.begin()) return v0;
  return std::prev(it)->v_post;
}

JumpTrajectory simulate_jump_process(const Vec& x0, const Vec& v0, double t_end,
                                     const TorusGeometry& geom, Rng& rng,
                                     const JumpOptions& options) {
  require(t_end > 0.0, "t_end must be positive");
  require(options.rate_scale >= 0.0, "rate scale must be nonnegative");
  geom.validate();
  check_dimension(v0, geom);
  const int d = geom.dim;
  JumpTrajectory traj;
  traj.x0 = x0;
  traj.v0 = v0;
  traj.t_end = t_end;
  if (options.rate_scale == 0.0) return traj;

  const double cd = kernel_constant(d) * options.rate_scale;
  const double m = mean_speed(options.beta, d);
  std::exponential_distribution<double> expo(1.0);
  double t = 0.0;
  Vec x = x0, v = v0;
  while (true) {
    const double rate = cd * (norm(v) + m);
    const double dt = expo(rng) / rate;
    if (t + dt > t_end) break;
    t += dt;
    x += dt * v;
    ++traj.proposals;
    if (auto w = try_collision(v, options.beta, d, rng)) {
      traj.events.push_back({t, x, v, *w});
      v = *w;
    }
  }
  return traj;
}

std::size_t VelocityGrid::index(const std::array<int, 3>& k) const {
  std::size_t idx = static_cast<std::size_t>(k[0]) * per_axis + k[1];
  if (d == 3) idx = idx * per_axis + k[2];
  return idx;
}

VelocityGrid make_velocity_grid(int d, double beta, double h, double v_max) {
  check_dim(d);
  require(beta > 0.0, "beta must be positive");
  VelocityGrid g;
  g.d = d;
  g.beta = beta;
  g.v_max = v_max > 0.0 ? v_max : 6.0 / std::sqrt(beta);
  if (!(h > 0.0)) h = g.v_max / (d == 2 ? 12.0 : 8.0);
  const int half = std::max(1, static_cast<int>(std::lround(g.v_max / h)));
  g.h = g.v_max / half;
  g.per_axis = 2 * half + 1;
  const int n = g.per_axis;
  const double mnorm = std::pow(beta / (2.0 * kPi), 0.5 * d) * std::pow(g.h, d);
  double total = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < (d == 3 ? n : 1); ++c) {
        Vec v{-g.v_max + a * g.h, -g.v_max + b * g.h, d == 3 ? -g.v_max + c * g.h : 0.0};
        g.nodes.push_back(v);
        const double w = mnorm * std::exp(-0.5 * beta * norm2(v));
        g.mass.push_back(w);
        total += w;
      }
  for (auto& w : g.mass) w /= total;
  return g;
}

int default_angular_order(int d) { return d == 2 ? 48 : 4; }

AngularRule angular_rule(int d, int order) {
  check_dim(d);
  require(order >= 1, "angular order must be positive");
  AngularRule r;
  if (d == 2) {
    for (int k = 0; k < order; ++k) {
      const double th = 2.0 * kPi * (k + 0.5) / order;
      r.directions.push_back({std::cos(th), std::sin(th)});
      r.weights.push_back(2.0 * kPi / order);
    }
    return r;
  }
  std::vector<double> gw;
  const auto gx = gauss_legendre_nodes(order, gw);
  const int naz = 2 * order;
  for (int i = 0; i < order; ++i) {
    const double c = gx[i], s = std::sqrt(std::max(0.0, 1.0 - c * c));
    for (int k = 0; k < naz; ++k) {
      const double phi = 2.0 * kPi * (k + 0.5) / naz;
      r.directions.push_back({s * std::cos(phi), s * std::sin(phi), c});
      r.weights.push_back(gw[i] * 2.0 * kPi / naz);
    }
  }
  return r;
}

namespace {

void finalize_operator(OperatorL& op, const Eigen::MatrixXd& gain) {
  const auto& m = op.grid.mass;
  const Eigen::Index n = gain.rows();
  op.matrix.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double s = 0.5 * (m[i] * gain(i, j) + m[j] * gain(j, i));
      op.matrix(i, j) = s;
      row += s;
    }
    op.matrix(i, i) = -row;
  }
  for (Eigen::Index i = 0; i < n; ++i) op.matrix.row(i) /= m[i];
}

}  // namespace

OperatorL assemble_L(const VelocityGrid& grid, int angular_order) {
  require(!grid.nodes.empty(), "empty velocity grid");
  const int d = grid.d;
  if (angular_order <= 0) angular_order = default_angular_order(d);
  const auto rule = angular_rule(d, angular_order);
  const std::size_t n = grid.size();
  const int na = grid.per_axis;

  OperatorL op;
  op.grid = grid;
  op.angular_order = angular_order;
  op.loss_rate = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd gain = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> dropped(n, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    const Vec& v = grid.nodes[i];
    for (std::size_t j = 0; j < n; ++j) {
      const Vec u = v - grid.nodes[j];
      for (std::size_t q = 0; q < rule.directions.size(); ++q) {
        const Vec& w = rule.directions[q];
        const double un = dot(u, w);
        if (un <= 0.0) continue;
        const double r = grid.mass[j] * rule.weights[q] * un;
        op.loss_rate[i] += r;
        const Vec target = v - un * w;
        std::array<int, 3> base{0, 0, 0};
        std::array<double, 3> frac{0, 0, 0};
        bool inside = true;
        for (int k = 0; k < d && inside; ++k) {
          const double s = (target[k] + grid.v_max) / grid.h;
          int b = static_cast<int>(std::floor(s));
          if (b == na - 1 && s <= na - 1 + 1e-12) b = na - 2;
          if (s < -1e-12 || b < 0 || b > na - 2) {
            inside = false;
            break;
          }
          base[k] = b;
          frac[k] = std::clamp(s - b, 0.0, 1.0);
        }
        if (!inside) {
          dropped[i] += r;
          continue;
        }
        const int corners = 1 << d;
        for (int c = 0; c < corners; ++c) {
          std::array<int, 3> idx{0, 0, 0};
          double wt = r;
          for (int k = 0; k < d; ++k) {
            const int bit = (c >> k) & 1;
            idx[k] = base[k] + bit;
            wt *= bit ? frac[k] : 1.0 - frac[k];
          }
          if (wt != 0.0) gain(i, grid.index(idx)) += wt;
        }
      }
    }
  }

  double lost = 0.0, total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lost += grid.mass[i] * dropped[i];
    total += grid.mass[i] * op.loss_rate[i];
  }
  op.truncation = total > 0.0 ? lost / total : 0.0;
  if (op.truncation > 1e-3) throw Error("grid too small");
  finalize_operator(op, gain);
  return op;
}

OperatorL relaxation_operator(const VelocityGrid& grid, double nu0) {
  require(nu0 > 0.0, "relaxation rate must be positive");
  const std::size_t n = grid.size();
  OperatorL op;
  op.grid = grid;
  op.loss_rate = Eigen::VectorXd::Constant(n, nu0);
  Eigen::MatrixXd gain(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) gain(i, j) = nu0 * grid.mass[j];
  finalize_operator(op, gain);
  return op;
}

void write_operator(std::ostream& os, const OperatorL& op) {
  put_f64(os, op.grid.d);
  put_f64(os, op.grid.h);
  put_f64(os, op.grid.v_max);
  put_f64(os, op.grid.beta);
  for (Eigen::Index i = 0; i < op.matrix.rows(); ++i)
    for (Eigen::Index j = 0; j < op.matrix.cols(); ++j) put_f64(os, op.matrix(i, j));
}

OperatorL read_operator(std::istream& is) {
  const int d = static_cast<int>(get_f64(is));
  if (d != 2 && d != 3) throw Error("operator file: bad dimension");
  const double h = get_f64(is);
  const double v_max = get_f64(is);
  const double beta = get_f64(is);
  OperatorL op;
  op.grid = make_velocity_grid(d, beta, h, v_max);
  const auto n = static_cast<Eigen::Index>(op.grid.size());
  op.matrix.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) op.matrix(i, j) = get_f64(is);
  op.loss_rate = -op.matrix.diagonal();
  return op;
}

RelativeEntropy relative_entropy_monitor(std::span<const Vec> velocities, double beta, int d,
                                         int bins_per_axis) {
  check_dim(d);
  require(velocities.size() >= 10000, "relative entropy needs at least 1e4 samples");
  require(beta > 0.0, "beta must be positive");
  const int k = bins_per_axis > 0 ? bins_per_axis : (d == 2 ? 16 : 8);
  const double range = 6.0 / std::sqrt(beta);
  const double width = 2.0 * range / k;

  std::vector<double> axis_p(k);
  for (int b = 0; b < k; ++b) {
    const double lo = -range + b * width, hi = lo + width;
    axis_p[b] = stats::normal_cdf(std::sqrt(beta) * hi) - stats::normal_cdf(std::sqrt(beta) * lo);
  }
  std::size_t cells = 1;
  for (int a = 0; a < d; ++a) cells *= k;
  std::vector<double> q(cells + 1, 1.0);
  for (std::size_t c = 0; c < cells; ++c) {
    std::size_t rest = c;
    for (int a = 0; a < d; ++a) {
      q[c] *= axis_p[rest % k];
      rest /= k;
    }
  }
  double inside = 0.0;
  for (std::size_t c = 0; c < cells; ++c) inside += q[c];
  q[cells] = std::max(0.0, 1.0 - inside);

  std::vector<double> count(cells + 1, 0.0);
  for (const auto& v : velocities) {
    std::size_t c = 0, stride = 1;
    bool in = true;
    for (int a = 0; a < d; ++a) {
      const int b = static_cast<int>(std::floor((v[a] + range) / width));
      if (b < 0 || b >= k) {
        in = false;
        break;
      }
      c += stride * b;
      stride *= k;
    }
    count[in ? c : cells] += 1.0;
  }

  RelativeEntropy out;
  for (std::size_t c = 0; c < cells; ++c) out.empty_bins += count[c] == 0.0;
  double n = static_cast<double>(velocities.size());
  if (out.empty_bins > 0) {
    // pseudo-counts spread in proportion to the reference law
    out.smoothed = true;
    const double a = 0.5 * static_cast<double>(cells);
    for (std::size_t c = 0; c <= cells; ++c) count[c] += a * q[c];
    n += a * (inside + q[cells]);
  }
  double kl = 0.0;
  for (std::size_t c = 0; c <= cells; ++c) {
    if (count[c] <= 0.0) continue;
    const double p = count[c] / n;
    if (q[c] <= 0.0) throw Error("sample outside the support of the reference law");
    kl += p * std::log(p / q[c]);
  }
  out.value = kl;
  return out;
}

}  // namespace hsdiff
