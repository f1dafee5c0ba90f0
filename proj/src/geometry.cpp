#include "hsdiff/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "hsdiff/error.hpp"

namespace hsdiff {

void TorusGeometry::validate() const {
  require(dim == 2 || dim == 3, "torus dimension must be 2 or 3");
  require(std::isfinite(side) && side >= 1.0, "torus side must satisfy side >= 1");
}

double TorusGeometry::volume() const { return std::pow(side, dim); }

void check_dimension(const Vec& v, const TorusGeometry& geom) {
  for (int k = geom.dim; k < 3; ++k) {
    if (v[k] != 0.0) {
      throw ContractViolation("vector has a nonzero component beyond dimension " +
                              std::to_string(geom.dim));
    }
  }
}

Vec reduce(Vec x, const TorusGeometry& geom) {
  for (int k = 0; k < geom.dim; ++k) {
    x[k] -= geom.side * std::floor(x[k] / geom.side);
    if (x[k] >= geom.side) x[k] = 0.0;  // -tiny maps to side after rounding
  }
  return x;
}

Vec minimal_image(const Vec& x, const Vec& y, const TorusGeometry& geom) {
  check_dimension(x, geom);
  check_dimension(y, geom);
  Vec d = x - y;
  for (int k = 0; k < geom.dim; ++k) {
    d[k] -= geom.side * std::floor(d[k] / geom.side + 0.5);
  }
  return d;
}

double torus_distance(const Vec& x, const Vec& y, const TorusGeometry& geom) {
  return norm(minimal_image(x, y, geom));
}

std::optional<double> contact_time(const Vec& dr, const Vec& dv, double sigma) {
  const double b = dot(dr, dv);
  if (b >= 0.0) return std::nullopt;
  const double v2 = norm2(dv);
  const double c = norm2(dr) - sigma * sigma;
  const double disc = b * b - v2 * c;
  if (disc <= 0.0) return std::nullopt;
  const double t = c / (-b + std::sqrt(disc));
  return t > 0.0 ? t : 0.0;
}

std::optional<double> predict_pair_collision(const ParticleState& z1,
                                             const ParticleState& z2,
                                             double eps,
                                             const TorusGeometry& geom,
                                             double horizon) {
  require(horizon > 0.0, "prediction horizon must be positive");
  check_dimension(z1.velocity, geom);
  check_dimension(z2.velocity, geom);
  const Vec base = minimal_image(z2.position, z1.position, geom);
  if (norm(base) < eps * (1.0 - 1e-9)) throw Error("exclusion violated");

  const Vec dv = z2.velocity - z1.velocity;
  const double reach = norm(dv) * horizon + eps;
  const int shells = static_cast<int>(std::ceil(reach / geom.side + 0.5));
  const int kz = geom.dim == 3 ? shells : 0;

  std::optional<double> best;
  for (int a = -shells; a <= shells; ++a) {
    for (int b = -shells; b <= shells; ++b) {
      for (int c = -kz; c <= kz; ++c) {
        const Vec dr = base + Vec(a, b, c) * geom.side;
        if (norm(dr) > reach) continue;
        const auto t = contact_time(dr, dv, eps);
        if (t && *t <= horizon && (!best || *t < *best)) best = t;
      }
    }
  }
  return best;
}

Vec contact_deflection(const Vec& x1, const Vec& x2, const TorusGeometry& geom,
                       double eps) {
  const Vec d = minimal_image(x2, x1, geom);
  const double r = norm(d);
  if (std::abs(r - eps) > 1e-9 * eps) {
    throw Error("particles are not at contact distance");
  }
  return d / r;
}

std::pair<Vec, Vec> apply_elastic_collision(const Vec& v, const Vec& v1,
                                            const Vec& omega) {
  if (std::abs(norm(omega) - 1.0) > 1e-12) {
    throw ContractViolation("deflection vector must have unit length");
  }
  const double un = dot(v - v1, omega);
  return {v - un * omega, v1 + un * omega};
}

double unit_ball_volume(int d) {
  return d == 2 ? std::numbers::pi : 4.0 * std::numbers::pi / 3.0;
}

double unit_sphere_area(int d) {
  return d == 2 ? 2.0 * std::numbers::pi : 4.0 * std::numbers::pi;
}

}  // namespace hsdiff
