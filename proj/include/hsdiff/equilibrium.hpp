#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <vector>

#include "hsdiff/geometry.hpp"
#include "hsdiff/rng.hpp"

namespace hsdiff {

/// Hard-sphere gas on the torus.
struct GasParameters {
  std::size_t n = 2;
  double eps = 0.1;  // sphere diameter
  TorusGeometry geom;
  double beta = 1.0;
  std::uint64_t seed = 0;

  /// N * V_d * eps^d / side^d (excluded-volume fraction).
  double packing_fraction() const;
  /// N * eps^(d-1) / side^d; equals one on the Boltzmann-Grad family.
  double density_factor() const;
  /// Throws ConfigError naming the violated invariant.
  void validate() const;
};

struct Configuration {
  std::vector<ParticleState> states;
  std::size_t tagged_index = 0;
};

/// Initial weight of the tagged particle, normalized against the equilibrium
/// probability: E_{uniform x Maxwellian}[evaluate] = 1 and evaluate <= bound.
struct TaggedWeight {
  std::function<double(const Vec& x, const Vec& v)> evaluate;
  double bound = 1.0;
  double lipschitz_constant = 0.0;
  bool normalization_checked = false;
};

TaggedWeight unit_weight();

/// (1 + a cos(2 pi k.x / side)) g(|v|), with g a normalized bump
/// c (1 - (|v|/s)^2)^2 on |v| < s, or g = 1 when velocity_cutoff is zero.
struct CosineBumpSpec {
  double amplitude = 0.5;
  std::array<int, 3> wavevector{1, 0, 0};
  double velocity_cutoff = 0.0;
};

TaggedWeight cosine_bump_weight(const CosineBumpSpec& spec, const TorusGeometry& geom,
                                double beta);

/// Monte Carlo check of E[weight] = 1 under uniform x Maxwellian (fixed internal
/// stream, 2e5 draws). Sets normalization_checked on success; throws Error if
/// the mean is off by more than 1% or a draw exceeds the bound.
double check_normalization(TaggedWeight& weight, const TorusGeometry& geom, double beta);

/// Centered Gaussian velocity with per-component variance 1/beta.
Vec sample_maxwellian(double beta, int d, Rng& rng);

struct PositionSamplerStats {
  bool used_metropolis = false;
  std::size_t insertion_attempts = 0;
  std::size_t metropolis_moves = 0;
  std::size_t metropolis_accepted = 0;
};

/// Uniform positions on the exclusion domain. Random sequential insertion,
/// followed by 50 N Metropolis single-particle moves (uniform displacement in
/// a ball of radius 2 eps) when the packing fraction is at least 0.01.
/// Throws Error("density too high") if one insertion needs over 1e6 attempts.
std::vector<Vec> sample_positions(const GasParameters& params, Rng& rng,
                                  PositionSamplerStats* stats = nullptr);

/// Gibbs-measure draw: sample_positions plus independent Maxwellian velocities.
Configuration sample_equilibrium(const GasParameters& params, Rng& rng);

struct TaggedSamplerStats {
  std::size_t trials = 0;
};

/// Rejection sampler for density proportional to
/// 1_D(Z) * weight(z_1) * prod M_beta(v_i).
/// Throws Error("weight too peaked") if 1/bound < 1e-4 or no draw is accepted
/// within 1e5 trials.
Configuration sample_tagged_initial(const GasParameters& params,
                                    const TaggedWeight& weight, Rng& rng,
                                    TaggedSamplerStats* stats = nullptr);

/// True iff every pairwise torus distance exceeds eps.
bool validate_exclusion(const Configuration& conf, double eps, const TorusGeometry& geom);

/// Snapshot text format: header "N d side eps beta seed", then one line per
/// particle "x.. v.." with 17 significant digits.
void write_snapshot(std::ostream& os, const Configuration& conf,
                    const GasParameters& params);
Configuration read_snapshot(std::istream& is, GasParameters* params = nullptr);

}  // namespace hsdiff
