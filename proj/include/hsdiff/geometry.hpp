#pragma once

#include <optional>
#include <utility>

#include "hsdiff/vec.hpp"

namespace hsdiff {

/// Flat torus [0, side)^dim with periodic identification.
struct TorusGeometry {
  double side = 1.0;
  int dim = 2;

  /// Throws ContractViolation unless side >= 1 and dim is 2 or 3.
  void validate() const;
  double volume() const;
};

struct ParticleState {
  Vec position;
  Vec velocity;
};

/// Throws ContractViolation when a slot beyond geom.dim is nonzero.
void check_dimension(const Vec& v, const TorusGeometry& geom);

/// Componentwise reduction into [0, side).
Vec reduce(Vec x, const TorusGeometry& geom);

/// Displacement delta with y + delta == x (mod side) and every component in
/// [-side/2, side/2). Its length is the torus distance between x and y.
Vec minimal_image(const Vec& x, const Vec& y, const TorusGeometry& geom);

double torus_distance(const Vec& x, const Vec& y, const TorusGeometry& geom);

/// Time until |dr + dv t| first equals sigma, for straight-line relative
/// motion in free space (no periodic images). dr and dv are the relative
/// position and velocity of the partner. Absent when the pair is receding or
/// misses. Uses the cancellation-free root c / (-b + sqrt(disc)); a slight
/// overlap from roundoff with an approaching pair yields zero.
std::optional<double> contact_time(const Vec& dr, const Vec& dv, double sigma);

/// First contact time in [0, horizon] of spheres of diameter eps, scanning
/// every periodic image reachable within the horizon.
/// Throws Error("exclusion violated") if the spheres overlap initially.
std::optional<double> predict_pair_collision(const ParticleState& z1,
                                             const ParticleState& z2,
                                             double eps,
                                             const TorusGeometry& geom,
                                             double horizon);

/// Unit contact normal pointing from x1 to x2 along the minimal image.
/// Throws Error when |d(x1, x2) - eps| > 1e-9 eps.
Vec contact_deflection(const Vec& x1, const Vec& x2, const TorusGeometry& geom,
                       double eps);

/// Elastic hard-sphere scattering with contact normal omega:
///   v'  = v  - ((v - v1).omega) omega
///   v1' = v1 + ((v - v1).omega) omega
/// Returns (v', v1'). Throws ContractViolation unless |omega| = 1 within 1e-12.
std::pair<Vec, Vec> apply_elastic_collision(const Vec& v, const Vec& v1,
                                            const Vec& omega);

/// Volume of the unit ball in dimension d.
double unit_ball_volume(int d);

/// Surface measure |S^{d-1}| of the unit sphere in R^d.
double unit_sphere_area(int d);

}  // namespace hsdiff
