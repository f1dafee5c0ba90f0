#include "hsdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "hsdiff/error.hpp"
#include "hsdiff/stats.hpp"

namespace hsdiff {

namespace {

constexpr double kPi = std::numbers::pi;

double weighted_dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& m) {
  return (a.array() * b.array() * m.array()).sum();
}

Eigen::VectorXd masses(const OperatorL& op) {
  const auto n = static_cast<Eigen::Index>(op.grid.size());
  Eigen::VectorXd m(n);
  for (Eigen::Index i = 0; i < n; ++i) m[i] = op.grid.mass[i];
  return m;
}

Eigen::VectorXd velocity_component(const OperatorL& op, int a) {
  const auto n = static_cast<Eigen::Index>(op.grid.size());
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = op.grid.nodes[i][a];
  return v;
}

void project_constants(Eigen::VectorXd& x, const Eigen::VectorXd& m) {
  x.array() -= weighted_dot(x, Eigen::VectorXd::Ones(x.size()), m) / m.sum();
}

DiffusionEstimate finish_kappa(double signed_sum, int d, std::string method) {
  DiffusionEstimate est;
  est.method = std::move(method);
  est.signed_value = -signed_sum / d;
  est.kappa = signed_sum / d;
  if (!(est.kappa > 0.0)) throw Error("sign convention violated");
  est.ci_low = est.ci_high = est.kappa;
  return est;
}

double mean_free_time(double beta, int d) { return 1.0 / mean_collision_rate(beta, d); }

}  // namespace

DiffusionEstimate solve_kappa_spectral(const OperatorL& op, int max_iter) {
  const int d = op.grid.d;
  const Eigen::VectorXd m = masses(op);
  double total = 0.0;
  int iterations = 0;
  double worst = 0.0;
  for (int a = 0; a < d; ++a) {
    Eigen::VectorXd b = velocity_component(op, a);
    project_constants(b, m);
    const double bnorm = std::sqrt(weighted_dot(b, b, m));
    Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd r = b, p = b;
    double rr = weighted_dot(r, r, m);
    int it = 0;
    for (; it < max_iter && std::sqrt(rr) > 1e-13 * bnorm; ++it) {
      const Eigen::VectorXd kp = -(op.matrix * p);
      const double alpha = rr / weighted_dot(p, kp, m);
      x += alpha * p;
      r -= alpha * kp;
      project_constants(r, m);
      const double rr_new = weighted_dot(r, r, m);
      p = r + (rr_new / rr) * p;
      rr = rr_new;
    }
    project_constants(x, m);
    Eigen::VectorXd res = b + op.matrix * x;
    project_constants(res, m);
    const double rel = std::sqrt(weighted_dot(res, res, m)) / bnorm;
    if (rel > 1e-10) {
      throw Error("conjugate gradient did not converge (relative residual " +
                  std::to_string(rel) + ")");
    }
    worst = std::max(worst, rel);
    iterations = std::max(iterations, it);
    total += weighted_dot(b, x, m);
  }
  auto est = finish_kappa(total, d, "spectral");
  est.iterations = iterations;
  est.residual = worst;
  return est;
}

DiffusionEstimate solve_kappa_dense(const OperatorL& op) {
  const int d = op.grid.d;
  const Eigen::VectorXd m = masses(op);
  const Eigen::MatrixXd a = -(m.asDiagonal() * op.matrix) + m * m.transpose();
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
  double total = 0.0;
  for (int k = 0; k < d; ++k) {
    Eigen::VectorXd b = velocity_component(op, k);
    project_constants(b, m);
    const Eigen::VectorXd x = lu.solve(m.cwiseProduct(b));
    total += weighted_dot(b, x, m);
  }
  return finish_kappa(total, d, "dense");
}

Path sample_path(std::span<const TrajectorySample> samples, double dt, double t_end) {
  require(!samples.empty(), "no samples");
  require(dt > 0.0 && t_end >= 0.0, "bad sampling grid");
  require(samples.front().time <= 1e-12, "samples must start at time zero");
  require(t_end <= samples.back().time + 1e-9 * (1.0 + t_end), "sampling beyond the trajectory");
  Path path;
  path.dt = dt;
  const auto n = static_cast<std::size_t>(std::floor(t_end / dt + 1e-9)) + 1;
  path.position.reserve(n);
  path.velocity.reserve(n);
  std::size_t s = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    while (s + 1 < samples.size() && samples[s + 1].time <= t) ++s;
    const auto& z = samples[s];
    path.position.push_back(z.position + (t - z.time) * z.velocity);
    path.velocity.push_back(z.velocity);
  }
  return path;
}

std::vector<TrajectorySample> jump_samples(const JumpTrajectory& traj) {
  std::vector<TrajectorySample> out;
  out.reserve(traj.events.size() + 2);
  out.push_back({0.0, traj.x0, traj.v0});
  for (const auto& e : traj.events) out.push_back({e.time, e.position, e.v_post});
  out.push_back({traj.t_end, traj.position_at(traj.t_end), traj.velocity_at(traj.t_end)});
  return out;
}

Path sample_path(const JumpTrajectory& traj, double dt) {
  const auto s = jump_samples(traj);
  return sample_path(s, dt, traj.t_end);
}

Autocorrelation velocity_autocorrelation(std::span<const Path> paths, int max_lag,
                                         int origin_stride, int blocks_per_path) {
  require(!paths.empty(), "no paths");
  require(max_lag >= 1 && origin_stride >= 1 && blocks_per_path >= 1, "bad autocorrelation grid");
  Autocorrelation ac;
  ac.dt = paths.front().dt;
  for (const auto& p : paths) {
    require(p.dt == ac.dt, "paths must share the sampling step");
    const int n = static_cast<int>(p.velocity.size());
    const int last_origin = n - 1 - max_lag;
    require(last_origin >= 0, "path shorter than the maximal lag");
    std::vector<int> origins;
    for (int o = 0; o <= last_origin; o += origin_stride) origins.push_back(o);
    const int blocks = std::min<int>(blocks_per_path, static_cast<int>(origins.size()));
    for (int b = 0; b < blocks; ++b) {
      const std::size_t lo = origins.size() * b / blocks;
      const std::size_t hi = origins.size() * (b + 1) / blocks;
      std::vector<double> c(max_lag + 1, 0.0);
      for (std::size_t q = lo; q < hi; ++q) {
        const int o = origins[q];
        for (int l = 0; l <= max_lag; ++l) c[l] += dot(p.velocity[o], p.velocity[o + l]);
      }
      for (auto& x : c) x /= static_cast<double>(hi - lo);
      ac.batches.push_back(std::move(c));
    }
  }
  const std::size_t nb = ac.batches.size();
  ac.value.assign(max_lag + 1, 0.0);
  ac.stderr_.assign(max_lag + 1, 0.0);
  for (int l = 0; l <= max_lag; ++l) {
    std::vector<double> col(nb);
    for (std::size_t b = 0; b < nb; ++b) col[b] = ac.batches[b][l];
    ac.value[l] = stats::mean(col);
    ac.stderr_[l] = nb > 1 ? std::sqrt(stats::variance(col) / nb) : 0.0;
  }
  return ac;
}

DiffusionEstimate green_kubo_kappa(std::span<const Path> paths, double beta, int d,
                                   const GreenKuboOptions& options) {
  require(!paths.empty(), "no paths");
  const double mft = mean_free_time(beta, d);
  const double dt = paths.front().dt;
  double total = 0.0;
  for (const auto& p : paths) total += dt * static_cast<double>(p.velocity.size() - 1);
  require(total >= 1000.0 * mft, "Green-Kubo needs at least 1e3 mean free times of data");
  const double lag_time = options.max_lag_time > 0.0 ? options.max_lag_time : 30.0 * mft;
  const int max_lag = static_cast<int>(std::lround(lag_time / dt));
  const auto ac = velocity_autocorrelation(paths, max_lag, options.origin_stride,
                                           options.blocks_per_path);
  require(ac.batches.size() >= 2, "Green-Kubo needs at least two batches");

  constexpr int kRun = 10;
  int cut = -1;
  for (int l = 0; l + kRun - 1 <= max_lag; ++l) {
    bool quiet = true;
    for (int q = l; q < l + kRun && quiet; ++q) {
      quiet = std::abs(ac.value[q]) < 2.0 * ac.stderr_[q];
    }
    if (quiet) {
      cut = l;
      break;
    }
  }
  if (cut < 0) throw Error("insufficient decorrelation");

  auto integrate = [&](const std::vector<double>& c) {
    double s = 0.0;
    for (int l = 1; l <= cut; ++l) s += 0.5 * (c[l - 1] + c[l]) * dt;
    return s / d;
  };
  DiffusionEstimate est;
  est.method = "green-kubo";
  est.kappa = integrate(ac.value);
  std::vector<double> per;
  for (const auto& b : ac.batches) per.push_back(integrate(b));
  const double se = std::sqrt(stats::variance(per) / per.size());
  est.ci_low = est.kappa - 1.96 * se;
  est.ci_high = est.kappa + 1.96 * se;
  est.signed_value = -est.kappa;
  est.t_cut = cut * dt;
  if (!(est.kappa > 0.0)) throw Error("sign convention violated");
  return est;
}

MsdCurve msd_curve(std::span<const Path> paths, int max_lag, int origin_stride, int batches) {
  require(!paths.empty(), "no paths");
  require(max_lag >= 1 && origin_stride >= 0 && batches >= 1, "bad MSD grid");
  const double dt = paths.front().dt;
  const int nb = std::min<int>(batches, static_cast<int>(paths.size()));
  std::vector<std::vector<double>> sum(nb, std::vector<double>(max_lag + 1, 0.0));
  std::vector<double> count(nb, 0.0);
  for (std::size_t pi = 0; pi < paths.size(); ++pi) {
    const auto& p = paths[pi];
    require(p.dt == dt, "paths must share the sampling step");
    const int n = static_cast<int>(p.position.size());
    require(n - 1 >= max_lag, "path shorter than the maximal lag");
    const int b = static_cast<int>(pi % nb);
    const int step = origin_stride > 0 ? origin_stride : n;
    for (int o = 0; o + max_lag < n; o += step) {
      for (int l = 0; l <= max_lag; ++l) sum[b][l] += norm2(p.position[o + l] - p.position[o]);
      count[b] += 1.0;
    }
  }
  MsdCurve curve;
  double all = 0.0;
  for (double c : count) all += c;
  for (int l = 0; l <= max_lag; ++l) {
    curve.times.push_back(l * dt);
    double s = 0.0;
    for (int b = 0; b < nb; ++b) s += sum[b][l];
    curve.msd.push_back(s / all);
  }
  for (int b = 0; b < nb; ++b) {
    for (auto& x : sum[b]) x /= count[b];
    curve.batches.push_back(sum[b]);
  }
  curve.stderr_.assign(max_lag + 1, 0.0);
  if (nb > 1) {
    for (int l = 0; l <= max_lag; ++l) {
      std::vector<double> col(nb);
      for (int b = 0; b < nb; ++b) col[b] = curve.batches[b][l];
      curve.stderr_[l] = std::sqrt(stats::variance(col) / nb);
    }
  }
  return curve;
}

DiffusionEstimate msd_fit(const MsdCurve& curve, double t_lo, double t_hi, int d,
                          double mean_free_time) {
  require(t_lo >= 10.0 * mean_free_time * (1.0 - 1e-12),
          "MSD window must start after 10 mean free times");
  require(t_hi > t_lo, "empty MSD window");
  std::vector<double> x, y, w;
  std::vector<std::size_t> idx;
  bool have_err = true;
  for (std::size_t k = 0; k < curve.times.size(); ++k) {
    const double t = curve.times[k];
    if (t < t_lo - 1e-12 * t_hi || t > t_hi + 1e-12 * t_hi) continue;
    idx.push_back(k);
    x.push_back(t);
    y.push_back(curve.msd[k]);
    have_err = have_err && k < curve.stderr_.size() && curve.stderr_[k] > 0.0;
  }
  require(x.size() >= 3, "MSD window holds fewer than three points");
  if (have_err) {
    for (auto k : idx) w.push_back(1.0 / (curve.stderr_[k] * curve.stderr_[k]));
  }
  const auto fit = stats::linear_fit(x, y, w);
  DiffusionEstimate est;
  est.method = "msd-fit";
  est.kappa = fit.slope / (2.0 * d);
  est.signed_value = -est.kappa;
  est.r_squared = fit.r_squared;
  double se = 0.0;
  if (curve.batches.size() >= 2) {
    std::vector<double> slopes;
    for (const auto& b : curve.batches) {
      std::vector<double> yb;
      for (auto k : idx) yb.push_back(b[k]);
      slopes.push_back(stats::linear_fit(x, yb, w).slope / (2.0 * d));
    }
    se = std::sqrt(stats::variance(slopes) / slopes.size());
  } else {
    // with inverse-variance weights the fit error is absolute already
    se = fit.slope_stderr / (2.0 * d);
  }
  est.ci_low = est.kappa - 1.96 * se;
  est.ci_high = est.kappa + 1.96 * se;
  if (fit.r_squared < 0.99) {
    est.warning = true;
    est.note = "MSD not linear over the window (R^2 = " + std::to_string(fit.r_squared) + ")";
  }
  return est;
}

RescaledPath rescale_path(const Path& path, double lambda, double dtau, double tau_max) {
  require(lambda >= 1.0 && dtau > 0.0 && tau_max >= dtau, "bad rescaling parameters");
  const double span = path.dt * static_cast<double>(path.position.size() - 1);
  if (span < lambda * lambda * tau_max * (1.0 - 1e-12)) throw Error("insufficient run length");
  RescaledPath out;
  out.lambda = lambda;
  out.dtau = dtau;
  const auto n = static_cast<std::size_t>(std::floor(tau_max / dtau + 1e-9)) + 1;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = lambda * lambda * static_cast<double>(k) * dtau / path.dt;
    auto i = static_cast<std::size_t>(std::floor(s + 1e-9));
    if (i >= path.position.size() - 1) i = path.position.size() - 1;
    const double f = std::max(0.0, s - static_cast<double>(i));
    Vec x = path.position[i];
    if (f > 1e-9 && i + 1 < path.position.size()) {
      x = (1.0 - f) * path.position[i] + f * path.position[i + 1];
    }
    out.xi.push_back(x / lambda);
  }
  return out;
}

GaussianityReport gaussianity_report(std::span<const RescaledPath> paths, double kappa, int d,
                                     int stride, double alpha, double variance_tol,
                                     double common_mode_variance) {
  require(!paths.empty() && stride >= 1 && kappa > 0.0 && common_mode_variance >= 0.0,
          "bad gaussianity input");
  require(d == 2 || d == 3, "dimension must be 2 or 3");
  const double dtau = paths.front().dtau * stride;
  // increments grouped by (path, coordinate) so successive pairs are known
  std::vector<double> inc;
  double sxy = 0.0, pairs = 0.0;
  std::vector<std::pair<double, double>> succ;
  for (const auto& p : paths) {
    require(p.dtau * stride == dtau, "paths must share the time step");
    for (int a = 0; a < d; ++a) {
      double prev = 0.0;
      bool have = false;
      for (std::size_t k = 0; k + stride < p.xi.size(); k += stride) {
        const double dx = p.xi[k + stride][a] - p.xi[k][a];
        inc.push_back(dx);
        if (have) succ.push_back({prev, dx});
        prev = dx;
        have = true;
      }
    }
  }
  require(inc.size() >= 20, "too few increments");
  GaussianityReport r;
  r.increments = inc.size();
  const double n = static_cast<double>(inc.size());
  r.mean = stats::mean(inc);
  r.variance = stats::variance(inc);
  const double sd = std::sqrt(r.variance);
  r.mean_p = stats::t_test_p(r.mean / std::sqrt(r.variance / n + common_mode_variance), n - 1.0);
  r.variance_ratio = r.variance / (2.0 * kappa * dtau);
  r.variance_pass = std::abs(r.variance_ratio - 1.0) <= variance_tol;
  r.mean_pass = r.mean_p > alpha;

  const std::size_t keep = 5000;
  const std::size_t skip = (inc.size() + keep - 1) / keep;
  std::vector<double> z;
  for (std::size_t k = 0; k < inc.size(); k += skip) z.push_back((inc[k] - r.mean) / sd);
  const auto ks = stats::ks_test(z, stats::normal_cdf);
  r.ks_statistic = ks.statistic;
  r.ks_p = ks.p_value;
  r.normality_pass = r.ks_p > alpha;

  if (succ.size() >= 3) {
    for (const auto& [a, b] : succ) {
      sxy += (a - r.mean) * (b - r.mean);
      pairs += 1.0;
    }
    r.lag1_correlation = sxy / pairs / r.variance;
    r.lag1_p = stats::z_test_p(r.lag1_correlation * std::sqrt(pairs));
  }
  r.independence_pass = r.lag1_p > alpha;
  return r;
}

double FourierDensity::evaluate(const Vec& y, int d) const {
  double rho = 1.0;
  for (const auto& m : modes) {
    double ph = 0.0;
    for (int k = 0; k < d; ++k) ph += m.wavevector[k] * y[k];
    rho += m.amplitude * std::cos(2.0 * kPi * ph);
  }
  return rho;
}

FourierDensity FourierDensity::evolve(double kappa, double tau) const {
  FourierDensity out = *this;
  for (auto& m : out.modes) {
    double k2 = 0.0;
    for (int v : m.wavevector) k2 += static_cast<double>(v) * v;
    m.amplitude *= std::exp(-kappa * 4.0 * kPi * kPi * k2 * tau);
  }
  return out;
}

double heat_kernel_compare(std::span<const Vec> positions, const FourierDensity& rho0,
                           double kappa, double tau, int d, int bins_per_axis) {
  require(positions.size() >= 10000, "heat kernel comparison needs at least 1e4 positions");
  require(d == 2 || d == 3, "dimension must be 2 or 3");
  require(bins_per_axis >= 1, "need at least one bin");
  const int k = bins_per_axis;
  const auto rho = rho0.evolve(kappa, tau);
  std::size_t cells = 1;
  for (int a = 0; a < d; ++a) cells *= k;
  std::vector<double> hist(cells, 0.0);
  for (const auto& y : positions) {
    std::size_t c = 0, stride = 1;
    for (int a = 0; a < d; ++a) {
      double u = y[a] - std::floor(y[a]);
      int b = std::min(k - 1, static_cast<int>(u * k));
      c += stride * b;
      stride *= k;
    }
    hist[c] += 1.0;
  }
  const double n = static_cast<double>(positions.size());
  const double w = 1.0 / k;
  double l1 = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    std::array<int, 3> b{0, 0, 0};
    std::size_t rest = c;
    for (int a = 0; a < d; ++a) {
      b[a] = static_cast<int>(rest % k);
      rest /= k;
    }
    // exact bin probability: the cosine modes factor over the box edges
    double p = std::pow(w, d);
    for (const auto& m : rho.modes) {
      std::complex<double> prod = 1.0;
      for (int a = 0; a < d; ++a) {
        const double lo = b[a] * w, hi = lo + w;
        const int kk = m.wavevector[a];
        if (kk == 0) {
          prod *= w;
        } else {
          const double q = 2.0 * kPi * kk;
          prod *= (std::exp(std::complex<double>(0, q * hi)) - std::exp(std::complex<double>(0, q * lo))) /
                  std::complex<double>(0, q);
        }
      }
      p += m.amplitude * prod.real();
    }
    l1 += std::abs(hist[c] / n - p);
  }
  return l1;
}

std::pair<double, double> mode_amplitude(std::span<const Vec> displacements, double amplitude,
                                         const std::array<int, 3>& wavevector, int d) {
  require(displacements.size() >= 2, "need displacements");
  std::vector<double> c;
  c.reserve(displacements.size());
  for (const auto& x : displacements) {
    double ph = 0.0;
    for (int k = 0; k < d; ++k) ph += wavevector[k] * x[k];
    c.push_back(std::cos(2.0 * kPi * ph));
  }
  const double m = stats::mean(c);
  const double se = std::sqrt(stats::variance(c) / c.size());
  return {amplitude * m, std::abs(amplitude) * se};
}

DecayFit fit_mode_decay(std::span<const double> tau, std::span<const double> amplitude,
                        std::span<const double> stderr_) {
  require(tau.size() == amplitude.size() && tau.size() == stderr_.size() && tau.size() >= 2,
          "decay fit needs matching series");
  std::vector<double> x, y, w;
  for (std::size_t k = 0; k < tau.size(); ++k) {
    if (!(amplitude[k] > 0.0)) continue;
    x.push_back(tau[k]);
    y.push_back(std::log(amplitude[k]));
    const double rel = stderr_[k] > 0.0 ? stderr_[k] / amplitude[k] : 1e-12;
    w.push_back(1.0 / (rel * rel));
  }
  require(x.size() >= 2, "too few positive amplitudes");
  const auto f = stats::linear_fit(x, y, w);
  return {-f.slope, f.slope_stderr, f.r_squared};
}

}  // namespace hsdiff
