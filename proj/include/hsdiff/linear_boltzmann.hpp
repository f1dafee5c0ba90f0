#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hsdiff/geometry.hpp"
#include "hsdiff/rng.hpp"

namespace hsdiff {

/// c_d = |S^{d-2}| / (d-1): the collision kernel integrated over the sphere
/// of deflections, per unit relative speed (2 in d=2, pi in d=3).
double kernel_constant(int d);

/// E|v1| under the Maxwellian.
double mean_speed(double beta, int d);

/// Equilibrium average of the jump rate, c_d E|v - v1| with v, v1 ~ M_beta
/// (density factor one).
double mean_collision_rate(double beta, int d);

/// nu(v) = int M_beta(v1) ((v - v1).omega)_+ domega dv1, by adaptive
/// Gauss-Kronrod quadrature of the radial reduction. Throws Error with the
/// residual when the quadrature does not converge.
double total_jump_rate(const Vec& v, double beta, int d);

/// int nu(v) M_beta(v) dv by radial quadrature of total_jump_rate; agrees
/// with mean_collision_rate up to quadrature error.
double equilibrium_collision_rate(double beta, int d);

/// Post-collision velocity of a particle moving at v after one collision with
/// a Maxwellian background. (v1, omega) is drawn from the density
/// proportional to M_beta(v1) ((v - v1).omega)_+.
Vec sample_post_collision(const Vec& v, double beta, int d, Rng& rng);

struct JumpEvent {
  double time;
  Vec position;  // unwrapped
  Vec v_pre;
  Vec v_post;
};

struct JumpTrajectory {
  Vec x0;
  Vec v0;
  double t_end = 0.0;
  std::vector<JumpEvent> events;
  std::size_t proposals = 0;  // thinning candidates, accepted or not

  /// Unwrapped position and velocity at time t in [0, t_end].
  Vec position_at(double t) const;
  Vec velocity_at(double t) const;
};

struct JumpOptions {
  double beta = 1.0;
  // Multiplies the collision rate; zero gives free flight.
  double rate_scale = 1.0;
};

/// Tagged particle of the linear Boltzmann equation as a velocity-jump
/// process. Jump times come from thinning a Poisson clock with the majorant
/// c_d (|v| + E|v1|), which is constant along a flight. A candidate draws v1
/// from M_beta(v1) (|v| + |v1|) and is kept with probability
/// |v - v1| / (|v| + |v1|), which makes the accepted rate exactly nu(v).
JumpTrajectory simulate_jump_process(const Vec& x0, const Vec& v0, double t_end,
                                     const TorusGeometry& geom, Rng& rng,
                                     const JumpOptions& options = {});

/// Uniform Cartesian velocity grid on [-v_max, v_max]^d.
struct VelocityGrid {
  int d = 2;
  double beta = 1.0;
  double v_max = 6.0;
  double h = 0.5;
  int per_axis = 25;
  std::vector<Vec> nodes;
  std::vector<double> mass;  // h^d M_beta(node), renormalized to sum 1

  std::size_t size() const { return nodes.size(); }
  /// Flat index of the multi-index (i0, i1[, i2]).
  std::size_t index(const std::array<int, 3>& k) const;
};

/// v_max = 6/sqrt(beta); h = v_max/12 (d=2) or v_max/8 (d=3) unless given.
VelocityGrid make_velocity_grid(int d, double beta, double h = 0.0, double v_max = 0.0);

/// Unit directions and weights on S^{d-1} with weights summing to |S^{d-1}|.
/// d=2: `order` equally spaced midpoints. d=3: `order` Gauss-Legendre nodes in
/// cos(theta) times 2*order equally spaced azimuths.
struct AngularRule {
  std::vector<Vec> directions;
  std::vector<double> weights;
};
AngularRule angular_rule(int d, int order);

/// Default angular order: 48 (d=2) or 4 (d=3).
int default_angular_order(int d);

struct OperatorL {
  VelocityGrid grid;
  Eigen::MatrixXd matrix;   // (L phi)_i = sum_j matrix(i, j) phi_j
  Eigen::VectorXd loss_rate;  // raw quadrature of nu at each node
  int angular_order = 0;
  double truncation = 0.0;  // mass-weighted fraction of dropped gain
};

/// Discretized linear Boltzmann operator. Post-collision values are read from
/// the grid by multilinear interpolation; targets leaving the grid are dropped
/// and counted in `truncation` (Error("grid too small") above 1e-3). The result
/// is made exactly conservative and self-adjoint in the mass-weighted inner
/// product: the weighted matrix is replaced by its symmetric part and its
/// diagonal by minus the off-diagonal row sums.
OperatorL assemble_L(const VelocityGrid& grid, int angular_order = 0);

/// BGK-type relaxation L phi = nu0 (<phi>_M - phi) on the grid.
OperatorL relaxation_operator(const VelocityGrid& grid, double nu0);

/// Binary layout: d, h, v_max, beta as f64, then the n x n matrix row-major,
/// all little-endian.
void write_operator(std::ostream& os, const OperatorL& op);
OperatorL read_operator(std::istream& is);

struct RelativeEntropy {
  double value = 0.0;
  std::size_t empty_bins = 0;
  bool smoothed = false;
};

/// Histogram estimate of int h log(h / M_beta) dv from a velocity ensemble
/// (at least 1e4 samples). Bins tile [-6/sqrt(beta), 6/sqrt(beta)]^d plus one
/// overflow cell; bin probabilities under M_beta are exact. If any bin is
/// empty, half a count is added to every bin and the result is flagged.
RelativeEntropy relative_entropy_monitor(std::span<const Vec> velocities, double beta, int d,
                                         int bins_per_axis = 0);

}  // namespace hsdiff
