#pragma once

#include <span>
#include <string>
#include <vector>

#include "hsdiff/linear_boltzmann.hpp"
#include "hsdiff/md.hpp"

namespace hsdiff {

struct DiffusionEstimate {
  double kappa = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::string method;
  // <v, L^{-1} v>_M / d before the sign flip (negative for a dissipative L)
  double signed_value = 0.0;
  bool warning = false;
  std::string note;
  double r_squared = 1.0;
  int iterations = 0;
  double residual = 0.0;
  double t_cut = 0.0;
};

/// Solves -L chi_a = v_a by conjugate gradients in the mass-weighted inner
/// product, on the complement of the constants. kappa = (1/d) sum_a <v_a, chi_a>.
/// Throws Error if the relative residual exceeds 1e-10 after max_iter
/// iterations, or Error("sign convention violated") if kappa <= 0.
DiffusionEstimate solve_kappa_spectral(const OperatorL& op, int max_iter = 10000);

/// Same quantity from a dense LU factorization of the bordered system
/// (-W L + m m^T) chi = W v.
DiffusionEstimate solve_kappa_dense(const OperatorL& op);

/// Positions (unwrapped) and velocities sampled at t = k dt, k = 0..n-1.
struct Path {
  double dt = 0.0;
  std::vector<Vec> position;
  std::vector<Vec> velocity;
};

/// Piecewise-linear interpolation of a sample sequence (MD tagged trajectory
/// or converted jump trajectory) on the grid k dt covering [0, t_end].
Path sample_path(std::span<const TrajectorySample> samples, double dt, double t_end);
Path sample_path(const JumpTrajectory& traj, double dt);

/// Jump trajectory in the tagged-trajectory sample format.
std::vector<TrajectorySample> jump_samples(const JumpTrajectory& traj);

struct Autocorrelation {
  double dt = 0.0;
  std::vector<double> value;   // E[v(0).v(s)] at s = l dt
  std::vector<double> stderr_;  // batch-means standard error
  std::vector<std::vector<double>> batches;
};

/// Velocity autocorrelation with time origins every `origin_stride` samples.
/// Each path contributes `blocks_per_path` batches of consecutive origins.
Autocorrelation velocity_autocorrelation(std::span<const Path> paths, int max_lag,
                                         int origin_stride = 1, int blocks_per_path = 1);

struct GreenKuboOptions {
  double max_lag_time = 0.0;  // default: 30 mean free times
  int origin_stride = 4;
  int blocks_per_path = 1;
};

/// kappa = (1/d) int_0^T_cut C(s) ds, where T_cut is the first lag after
/// which |C| < 2 SE holds for 10 consecutive lags. Requires paths totalling at
/// least 1e3 mean free times (density factor one). Throws
/// Error("insufficient decorrelation") if no such lag exists.
DiffusionEstimate green_kubo_kappa(std::span<const Path> paths, double beta, int d,
                                   const GreenKuboOptions& options = {});

struct MsdCurve {
  std::vector<double> times;
  std::vector<double> msd;
  std::vector<double> stderr_;
  std::vector<std::vector<double>> batches;  // per-batch curves
};

/// E|x(t0 + t) - x(t0)|^2 on lags 0..max_lag. origin_stride = 0 uses only
/// t0 = 0. Paths are split round-robin into `batches` groups for the error.
MsdCurve msd_curve(std::span<const Path> paths, int max_lag, int origin_stride = 0,
                   int batches = 20);

/// Weighted least-squares slope over [t_lo, t_hi], divided by 2d. The window
/// must start after 10 mean free times. The interval comes from the spread
/// of per-batch slopes when batches are present. Flags a warning when R^2 <
/// 0.99.
DiffusionEstimate msd_fit(const MsdCurve& curve, double t_lo, double t_hi, int d,
                          double mean_free_time);

/// Xi(tau) = x(lambda^2 tau) / lambda on tau = k dtau.
struct RescaledPath {
  double lambda = 1.0;
  double dtau = 0.0;
  std::vector<Vec> xi;
};

/// Throws Error("insufficient run length") when the path is shorter than
/// lambda^2 tau_max.
RescaledPath rescale_path(const Path& path, double lambda, double dtau, double tau_max);

struct GaussianityReport {
  std::size_t increments = 0;  // scalar increments pooled over coordinates
  double mean = 0.0;
  double mean_p = 1.0;
  double variance = 0.0;
  double variance_ratio = 0.0;  // variance / (2 kappa dtau)
  double ks_statistic = 0.0;
  double ks_p = 1.0;
  double lag1_correlation = 0.0;
  double lag1_p = 1.0;
  bool mean_pass = false;
  bool variance_pass = false;
  bool normality_pass = false;
  bool independence_pass = false;
  bool pass() const { return mean_pass && variance_pass && normality_pass && independence_pass; }
};

/// Increments of Xi over disjoint intervals of `stride` samples, tested for
/// zero mean (t-test), variance 2 kappa dtau per coordinate (within
/// `variance_tol`), normality (KS against N(0, sample variance) on at most 5000
/// standardized increments) and lag-one decorrelation. Tests pass at p > alpha.
/// `common_mode_variance` is added to the variance of the mean for paths that
/// share a drift, such as all particles of one run.
GaussianityReport gaussianity_report(std::span<const RescaledPath> paths, double kappa, int d,
                                     int stride = 1, double alpha = 0.01,
                                     double variance_tol = 0.1, double common_mode_variance = 0.0);

/// rho(y) = 1 + sum_m a_m cos(2 pi k_m . y) on the unit torus.
struct FourierDensity {
  struct Mode {
    double amplitude;
    std::array<int, 3> wavevector;
  };
  std::vector<Mode> modes;
  double evaluate(const Vec& y, int d) const;
  /// Exact heat flow: each mode decays by exp(-kappa |2 pi k|^2 tau).
  FourierDensity evolve(double kappa, double tau) const;
};

/// L1 distance between the histogram of positions (reduced to [0,1)^d) and
/// the heat-equation solution at tau. Requires at least 1e4 positions.
double heat_kernel_compare(std::span<const Vec> positions, const FourierDensity& rho0,
                           double kappa, double tau, int d, int bins_per_axis = 16);

/// a E[cos(2 pi k . dXi)]: the amplitude at tau of the mode a cos(2 pi k . y)
/// for an initial density 1 + a cos(2 pi k . y), from displacements of an
/// equilibrium ensemble. Returns (estimate, standard error).
std::pair<double, double> mode_amplitude(std::span<const Vec> displacements, double amplitude,
                                         const std::array<int, 3>& wavevector, int d);

struct DecayFit {
  double rate = 0.0;
  double rate_stderr = 0.0;
  double r_squared = 0.0;
};

/// Weighted fit of log A(tau) = log a - rate tau.
DecayFit fit_mode_decay(std::span<const double> tau, std::span<const double> amplitude,
                        std::span<const double> stderr_);

}  // namespace hsdiff
