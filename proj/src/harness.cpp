#include "hsdiff/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>

#include <boost/math/special_functions/beta.hpp>

#include "harness_detail.hpp"
#include "hsdiff/diffusion.hpp"
#include "hsdiff/error.hpp"
#include "hsdiff/linear_boltzmann.hpp"
#include "hsdiff/md.hpp"
#include "hsdiff/parallel.hpp"
#include "hsdiff/stats.hpp"
#include "hsdiff/trees.hpp"

#ifndef HSDIFF_VERSION
#define HSDIFF_VERSION "unknown"
#endif

namespace hsdiff {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

struct Run {
  const ExperimentConfig& cfg;
  RunResult& res;
  fs::path out;
  bool write;
  std::optional<TaggedWeight> weight;

  RunManifest& m() { return res.manifest; }

  void check(std::string name, const std::string& kind, bool pass, double value,
             double threshold, std::string detail = {}) {
    m().checks.push_back({std::move(name), kind, pass, value, threshold, std::move(detail)});
  }
  void put(std::string key, double v) { m().summary.emplace_back(std::move(key), v); }
  void time(std::string key, double s) { res.timings.emplace_back(std::move(key), s); }
  Table& table(std::string name, std::vector<std::string> columns) {
    res.tables.push_back({std::move(name), std::move(columns), {}});
    return res.tables.back();
  }

  SimOptions sim_options(bool log) const { return {log, cfg.cell_side_min}; }

  Configuration initial_state(Rng& rng) const {
    if (weight) return sample_tagged_initial(cfg.gas, *weight, rng);
    return sample_equilibrium(cfg.gas, rng);
  }

  void dump(const Simulation& sim, ReplicaRecord& rec) const {
    if (!write) return;
    const std::string name = "replica_" + std::to_string(rec.index) + "_state.txt";
    std::ofstream os(out / name);
    write_snapshot(os, sim.configuration(), sim.params());
    rec.dump = name;
  }

  void advance(Simulation& sim, double t, ReplicaRecord& rec) const {
    try {
      sim.run_until(t);
    } catch (const InvariantFailure&) {
      dump(sim, rec);
      throw;
    }
    rec.events = sim.event_count();
    rec.collisions = sim.collision_count();
  }

  // Conservation and exclusion; a violation dumps the state and fails the replica.
  ConservationReport verify(const Simulation& sim, ReplicaRecord& rec) const {
    const auto cons = conservation_report(sim);
    const double tol = cfg.analysis.drift_tol;
    if (!(cons.momentum_drift <= tol && cons.energy_drift <= tol)) {
      dump(sim, rec);
      throw InvariantFailure("conservation drift above " + fmt(tol) + " (momentum " +
                             fmt(cons.momentum_drift) + ", energy " + fmt(cons.energy_drift) +
                             ")");
    }
    if (!validate_exclusion(sim.configuration(), cfg.gas.eps * (1.0 - 1e-9), cfg.gas.geom)) {
      dump(sim, rec);
      throw InvariantFailure("exclusion violated at t = " + fmt(sim.clock()));
    }
    return cons;
  }

  // Runs body(r, record, rng) for every replica. Returns false when any failed.
  template <typename Body>
  bool replicas(Body&& body) {
    auto& reps = m().replicas;
    reps.assign(static_cast<std::size_t>(cfg.replicas), {});
    std::vector<char> invariant(reps.size(), 0);
    parallel_for(reps.size(), cfg.workers, [&](std::size_t r) {
      auto& rec = reps[r];
      rec.index = r;
      rec.seed = replica_seed(cfg.seed, r);
      Rng rng(rec.seed);
      try {
        body(r, rec, rng);
      } catch (const InvariantFailure& e) {
        rec.ok = false;
        rec.error = e.what();
        invariant[r] = 1;
      } catch (const std::exception& e) {
        rec.ok = false;
        rec.error = e.what();
      }
    });
    for (std::size_t r = 0; r < reps.size(); ++r) {
      if (!reps[r].ok) {
        m().status = invariant[r] ? "invariant-failed" : "failed";
        m().failure = "replica " + std::to_string(r) + ": " + reps[r].error;
        return false;
      }
    }
    return true;
  }
};

DiffusionEstimate spectral_kappa(const ExperimentConfig& c, OperatorL* keep = nullptr) {
  const int d = c.gas.geom.dim;
  const double vmax = 6.0 / std::sqrt(c.gas.beta);
  const auto grid = make_velocity_grid(d, c.gas.beta, vmax / c.analysis.grid_div, vmax);
  auto op = assemble_L(grid, c.analysis.angular_order);
  auto est = solve_kappa_spectral(op);
  if (keep) *keep = std::move(op);
  return est;
}

std::vector<std::string> kappa_row(const DiffusionEstimate& e) {
  return {e.method,         fmt(e.kappa),     fmt(e.ci_low),   fmt(e.ci_high),
          fmt(e.signed_value), std::to_string(e.iterations), fmt(e.residual), fmt(e.t_cut),
          fmt(e.r_squared), e.note};
}

const std::vector<std::string> kKappaColumns{"method",     "kappa",    "ci_low",
                                             "ci_high",    "signed_value", "iterations",
                                             "residual",   "t_cut",    "r_squared",
                                             "note"};

double rel_diff(double a, double b) { return std::abs(a - b) / std::abs(b); }

MsdCurve merge_curves(std::vector<MsdCurve> per) {
  if (per.size() == 1) return std::move(per.front());
  MsdCurve c;
  c.times = per.front().times;
  const std::size_t n = c.times.size();
  const double R = static_cast<double>(per.size());
  c.msd.assign(n, 0.0);
  c.stderr_.assign(n, 0.0);
  for (const auto& p : per) {
    for (std::size_t l = 0; l < n; ++l) c.msd[l] += p.msd[l] / R;
    c.batches.push_back(p.msd);
  }
  for (std::size_t l = 0; l < n; ++l) {
    std::vector<double> col;
    for (const auto& p : per) col.push_back(p.msd[l]);
    c.stderr_[l] = std::sqrt(stats::variance(col) / R);
  }
  return c;
}

// MD positions of every particle (or the tagged one) at k dt, k = 0..steps.
std::vector<Path> record_paths(Run& run, Simulation& sim, bool all, double dt, std::size_t steps,
                               ReplicaRecord& rec) {
  std::vector<std::size_t> which;
  if (all) {
    for (std::size_t i = 0; i < sim.size(); ++i) which.push_back(i);
  } else {
    which.push_back(sim.tagged_index());
  }
  std::vector<Path> paths(which.size());
  for (auto& p : paths) {
    p.dt = dt;
    p.position.reserve(steps + 1);
  }
  for (std::size_t k = 0; k <= steps; ++k) {
    if (k > 0) run.advance(sim, dt * static_cast<double>(k), rec);
    for (std::size_t i = 0; i < which.size(); ++i) {
      paths[i].position.push_back(sim.unwrapped_position(which[i]));
    }
  }
  return paths;
}

std::size_t steps_for(double duration, double dt) {
  return static_cast<std::size_t>(std::llround(duration / dt));
}

// ---------------------------------------------------------------------------

void equilibrium_check(Run& run) {
  const auto& c = run.cfg;
  const auto& a = c.analysis;
  struct Row {
    double freq = 0.0, mom = 0.0, energy = 0.0, min_ratio = kNaN, ks_p = 0.0, clock = 0.0;
    std::vector<ParticleState> tagged;
    std::string log_file;
  };
  std::vector<Row> rows(static_cast<std::size_t>(c.replicas));
  const double T = a.duration_mft * c.mean_free_time();
  Stopwatch sw;
  const bool ok = run.replicas([&](std::size_t r, ReplicaRecord& rec, Rng& rng) {
    Simulation sim(run.initial_state(rng), c.gas, run.sim_options(c.write_log));
    auto& row = rows[r];
    for (int k = 1; k <= a.checkpoints; ++k) {
      run.advance(sim, T * k / a.checkpoints, rec);
      run.verify(sim, rec);
      if (sim.size() <= 4000) {
        const double ratio = sim.min_pair_distance() / c.gas.eps;
        row.min_ratio = std::isnan(row.min_ratio) ? ratio : std::min(row.min_ratio, ratio);
      }
    }
    const auto cons = run.verify(sim, rec);
    // under a uniform phi0 the particles are exchangeable, so each one samples
    // the one-particle marginal; otherwise only the tagged particle does
    if (run.weight) {
      row.tagged.push_back(sim.particle(sim.tagged_index()));
    } else {
      for (std::size_t i = 0; i < sim.size(); ++i) row.tagged.push_back(sim.particle(i));
    }
    row.mom = cons.momentum_drift;
    row.energy = cons.energy_drift;
    row.clock = sim.clock();
    row.freq = collision_frequency(sim);
    std::vector<double> comps;
    const int d = c.gas.geom.dim;
    for (std::size_t i = 0; i < sim.size(); ++i) {
      const auto v = sim.particle(i).velocity;
      for (int k = 0; k < d; ++k) comps.push_back(v[k]);
    }
    const double sb = std::sqrt(c.gas.beta);
    row.ks_p = stats::ks_test(comps, [sb](double x) { return stats::normal_cdf(x * sb); }).p_value;
    if (c.write_log && run.write) {
      row.log_file = "collisions_" + std::to_string(r) + ".bin";
      std::ofstream os(run.out / row.log_file, std::ios::binary);
      write_collision_log(os, sim.log(), d, LogFormat::binary);
    }
  });
  run.time("simulate", sw.lap());
  if (!ok) return;

  auto& t = run.table("replicas", {"replica", "seed", "events", "collisions", "time",
                                   "collision_frequency", "momentum_drift", "energy_drift",
                                   "min_distance_ratio", "ks_p"});
  double max_mom = 0.0, max_en = 0.0, min_ratio = kNaN, pass = 0.0, freq = 0.0;
  std::uint64_t collisions = 0;
  std::vector<ParticleState> tagged;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const auto& rec = run.m().replicas[r];
    t.add({std::to_string(r), std::to_string(rec.seed), std::to_string(rec.events),
           std::to_string(rec.collisions), fmt(row.clock), fmt(row.freq), fmt(row.mom),
           fmt(row.energy), fmt(row.min_ratio), fmt(row.ks_p)});
    max_mom = std::max(max_mom, row.mom);
    max_en = std::max(max_en, row.energy);
    if (!std::isnan(row.min_ratio)) {
      min_ratio = std::isnan(min_ratio) ? row.min_ratio : std::min(min_ratio, row.min_ratio);
    }
    pass += row.ks_p > a.ks_alpha ? 1.0 : 0.0;
    freq += row.freq * row.clock;
    collisions += rec.collisions;
    tagged.insert(tagged.end(), row.tagged.begin(), row.tagged.end());
    if (!row.log_file.empty()) run.m().outputs.push_back(row.log_file);
  }
  double clock_total = 0.0;
  for (const auto& row : rows) clock_total += row.clock;
  const double mean_freq = clock_total > 0.0 ? freq / clock_total : 0.0;
  const double predicted = c.gas.density_factor() * equilibrium_collision_rate(c.gas.beta, c.gas.geom.dim);
  const double frac = pass / static_cast<double>(rows.size());
  const double bound = run.weight ? run.weight->bound : 1.0;
  const auto mp = maximum_principle_check(tagged, c.gas.geom, c.gas.beta, bound);
  sw.lap();

  run.put("collisions", static_cast<double>(collisions));
  run.put("collision_frequency", mean_freq);
  run.put("predicted_frequency", predicted);
  run.put("frequency_rel_error", rel_diff(mean_freq, predicted));
  run.put("max_momentum_drift", max_mom);
  run.put("max_energy_drift", max_en);
  run.put("min_distance_ratio", min_ratio);
  run.put("ks_pass_fraction", frac);
  run.put("max_principle_excess_sigma", mp.max_excess_sigma);
  run.check("conservation", "invariant", std::max(max_mom, max_en) <= a.drift_tol,
            std::max(max_mom, max_en), a.drift_tol);
  run.check("exclusion", "invariant", std::isnan(min_ratio) || min_ratio >= 1.0 - 1e-9,
            min_ratio, 1.0 - 1e-9, "minimum pair distance over eps at checkpoints");
  run.check("stationarity", "invariant", frac >= a.ks_pass_fraction, frac, a.ks_pass_fraction,
            "fraction of replicas with velocity KS p above " + fmt(a.ks_alpha));
  run.check("maximum-principle", "invariant", mp.pass, mp.max_excess_sigma, 4.0);
  if (collisions > 0) {
    run.check("collision-frequency", "agreement", rel_diff(mean_freq, predicted) <= a.tolerance,
              rel_diff(mean_freq, predicted), a.tolerance);
  }
}

// MD mean squared displacement, per replica then merged.
struct MdMsd {
  MsdCurve curve;
  DiffusionEstimate fit;
};

std::optional<MdMsd> md_msd(Run& run) {
  const auto& c = run.cfg;
  const auto& a = c.analysis;
  const double mft = c.mean_free_time();
  const double dt = a.dt_mft * mft;
  const std::size_t steps = steps_for(a.duration_mft, a.dt_mft);
  std::vector<MsdCurve> curves(static_cast<std::size_t>(c.replicas));
  const int inner = c.replicas == 1 ? 20 : 1;
  Stopwatch sw;
  const bool ok = run.replicas([&](std::size_t r, ReplicaRecord& rec, Rng& rng) {
    Simulation sim(run.initial_state(rng), c.gas, run.sim_options(false));
    const auto paths = record_paths(run, sim, a.all_particles, dt, steps, rec);
    run.verify(sim, rec);
    curves[r] = msd_curve(paths, static_cast<int>(steps), 0, inner);
  });
  run.time("simulate", sw.lap());
  if (!ok) return std::nullopt;
  MdMsd out;
  out.curve = merge_curves(std::move(curves));
  out.fit = msd_fit(out.curve, a.fit_lo_mft * mft, a.fit_hi_mft * mft, c.gas.geom.dim, mft);
  return out;
}

void msd(Run& run) {
  const double mft = run.cfg.mean_free_time();
  const auto res = md_msd(run);
  if (!res) return;
  auto& t = run.table("msd", {"t", "t_mft", "msd", "stderr"});
  for (std::size_t l = 0; l < res->curve.times.size(); ++l) {
    t.add({fmt(res->curve.times[l]), fmt(res->curve.times[l] / mft), fmt(res->curve.msd[l]),
           fmt(res->curve.stderr_[l])});
  }
  auto& k = run.table("kappa", kKappaColumns);
  k.add(kappa_row(res->fit));
  run.put("kappa_msd", res->fit.kappa);
  run.put("kappa_msd_ci_low", res->fit.ci_low);
  run.put("kappa_msd_ci_high", res->fit.ci_high);
  run.put("r_squared", res->fit.r_squared);
  run.put("mean_free_time", mft);
}

std::vector<Path> jump_paths(const ExperimentConfig& c, int count, double rate_scale, double dt,
                             std::size_t steps, std::uint64_t stream) {
  std::vector<Path> paths(static_cast<std::size_t>(count));
  const double T = dt * static_cast<double>(steps);
  const int d = c.gas.geom.dim;
  const std::uint64_t base = derive_seed(c.seed, stream);
  parallel_for(paths.size(), c.workers, [&](std::size_t i) {
    Rng rng = make_rng(base, i);
    const Vec v0 = sample_maxwellian(c.gas.beta, d, rng);
    const auto traj =
        simulate_jump_process({}, v0, T, c.gas.geom, rng, {c.gas.beta, rate_scale});
    paths[i] = sample_path(traj, dt);
    paths[i].position.resize(steps + 1);
    paths[i].velocity.resize(steps + 1);
  });
  return paths;
}

void compare_levels(Run& run) {
  const auto& c = run.cfg;
  const auto& a = c.analysis;
  const double mft = c.mean_free_time();
  const auto md = md_msd(run);
  if (!md) return;
  Stopwatch sw;
  const double dt = a.dt_mft * mft;
  const std::size_t steps = steps_for(a.duration_mft, a.dt_mft);
  const auto paths = jump_paths(c, a.jump_paths, c.gas.density_factor(), dt, steps, 0x6a756d70);
  const auto jump = msd_curve(paths, static_cast<int>(steps), 0, 20);
  const auto jfit = msd_fit(jump, a.fit_lo_mft * mft, a.fit_hi_mft * mft, c.gas.geom.dim, mft);
  run.time("jump_process", sw.lap());
  auto spec = spectral_kappa(c);
  spec.kappa /= c.gas.density_factor();
  spec.ci_low = spec.ci_high = spec.kappa;
  run.time("spectral", sw.lap());

  auto& t = run.table("compare", {"t", "t_mft", "msd_md", "stderr_md", "msd_jump", "stderr_jump"});
  double worst = 0.0;
  for (std::size_t l = 0; l < md->curve.times.size(); ++l) {
    const double tt = md->curve.times[l];
    t.add({fmt(tt), fmt(tt / mft), fmt(md->curve.msd[l]), fmt(md->curve.stderr_[l]),
           fmt(jump.msd[l]), fmt(jump.stderr_[l])});
    const double tm = tt / mft;
    if (tm >= a.fit_lo_mft - 1e-9 && tm <= a.fit_hi_mft + 1e-9) {
      worst = std::max(worst, rel_diff(md->curve.msd[l], jump.msd[l]));
    }
  }
  auto md_fit = md->fit;
  md_fit.method = "msd-fit-md";
  auto j_fit = jfit;
  j_fit.method = "msd-fit-jump";
  auto& k = run.table("kappa", kKappaColumns);
  k.add(kappa_row(md_fit));
  k.add(kappa_row(j_fit));
  k.add(kappa_row(spec));

  run.put("msd_max_rel_diff", worst);
  run.put("kappa_md", md_fit.kappa);
  run.put("kappa_jump", j_fit.kappa);
  run.put("kappa_spectral", spec.kappa);
  run.put("kappa_md_vs_spectral", rel_diff(md_fit.kappa, spec.kappa));
  run.put("kappa_jump_vs_spectral", rel_diff(j_fit.kappa, spec.kappa));
  run.put("mean_free_time", mft);
  run.check("msd-agreement", "agreement", worst <= a.tolerance, worst, a.tolerance,
            "max relative MSD gap over the fit window");
  run.check("kappa-md-vs-spectral", "agreement",
            rel_diff(md_fit.kappa, spec.kappa) <= a.tolerance,
            rel_diff(md_fit.kappa, spec.kappa), a.tolerance);
}

void kappa(Run& run) {
  const auto& c = run.cfg;
  const auto& a = c.analysis;
  const int d = c.gas.geom.dim;
  const double beta = c.gas.beta;
  Stopwatch sw;
  OperatorL op;
  const auto spec = spectral_kappa(c, &op);
  run.time("spectral", sw.lap());
  auto& k = run.table("kappa", kKappaColumns);
  k.add(kappa_row(spec));
  run.put("kappa_spectral", spec.kappa);
  run.put("grid_nodes", static_cast<double>(op.grid.size()));

  if (static_cast<int>(op.grid.size()) <= a.dense_max_nodes) {
    const auto dense = solve_kappa_dense(op);
    run.time("dense", sw.lap());
    k.add(kappa_row(dense));
    const double gap = rel_diff(dense.kappa, spec.kappa);
    run.put("kappa_dense", dense.kappa);
    run.put("dense_vs_spectral", gap);
    run.check("dense-vs-iterative", "agreement", gap <= 1e-8, gap, 1e-8);
  }

  const double nu0 = mean_collision_rate(beta, d);
  const auto relax = solve_kappa_spectral(relaxation_operator(op.grid, nu0));
  double second = 0.0;
  for (std::size_t i = 0; i < op.grid.size(); ++i) second += op.grid.mass[i] * norm2(op.grid.nodes[i]);
  const double closed = second / (d * nu0);
  auto relax_row = relax;
  relax_row.method = "relaxation";
  k.add(kappa_row(relax_row));
  run.put("kappa_relaxation", relax.kappa);
  run.put("relaxation_closed_form", 1.0 / (beta * nu0));
  run.put("relaxation_grid_closed_form", closed);
  run.check("relaxation-closed-form", "agreement", rel_diff(relax.kappa, closed) <= 1e-9,
            rel_diff(relax.kappa, closed), 1e-9, "against the closed form on the grid");

  const double mft = 1.0 / nu0;
  const double dt = a.kappa_dt_mft * mft;
  const std::size_t steps = steps_for(a.kappa_duration_mft, a.kappa_dt_mft);
  const auto paths = jump_paths(c, a.kappa_paths, 1.0, dt, steps, 0x6b617070);
  run.time("jump_process", sw.lap());
  const auto gk = green_kubo_kappa(paths, beta, d);
  k.add(kappa_row(gk));
  const int lag = static_cast<int>(std::llround(a.fit_hi_mft / a.kappa_dt_mft));
  const auto curve = msd_curve(paths, lag, std::max(1, lag / 4), 20);
  const auto mfit = msd_fit(curve, a.fit_lo_mft * mft, a.fit_hi_mft * mft, d, mft);
  k.add(kappa_row(mfit));
  run.time("estimators", sw.lap());
  run.put("kappa_green_kubo", gk.kappa);
  run.put("kappa_msd", mfit.kappa);
  const double spread = std::max({rel_diff(gk.kappa, spec.kappa), rel_diff(mfit.kappa, spec.kappa),
                                  rel_diff(gk.kappa, mfit.kappa)});
  run.put("triple_max_rel_diff", spread);
  run.check("kappa-triple", "agreement", spread <= a.tolerance, spread, a.tolerance,
            "spectral, Green-Kubo and MSD pairwise");
}

void trees(Run& run) {
  const auto& c = run.cfg;
  const auto& a = c.analysis;
  const double mft = c.mean_free_time();
  const double window = a.window_mft * mft;
  const double tau = a.tau_mft * mft;
  struct TreeRow {
    std::uint32_t root;
    std::size_t nodes, edges, internal;
    int depth;
    bool recollision, admissible;
    int first_slice;
  };
  std::vector<std::vector<TreeRow>> rows(static_cast<std::size_t>(c.replicas));
  std::vector<std::string> logs(rows.size());
  Stopwatch sw;
  const bool ok = run.replicas([&](std::size_t r, ReplicaRecord& rec, Rng& rng) {
    Simulation sim(run.initial_state(rng), c.gas, run.sim_options(true));
    run.advance(sim, window, rec);
    run.verify(sim, rec);
    const std::size_t roots = a.roots > 0 ? std::min<std::size_t>(a.roots, sim.size()) : sim.size();
    for (std::size_t i = 0; i < roots; ++i) {
      const auto tree = build_backward_tree(sim.log(), static_cast<std::uint32_t>(i), window,
                                            window, {0.0, sim.clock()});
      const auto prof = branching_profile(tree, tau);
      rows[r].push_back({static_cast<std::uint32_t>(i), tree.nodes.size(), tree.edges.size(),
                         tree.internal.size(), tree.depth(), !tree.internal.empty(),
                         admissible(prof, a.branching_a), prof.counts.front()});
    }
    if (c.write_log && run.write) {
      logs[r] = "collisions_" + std::to_string(r) + ".bin";
      std::ofstream os(run.out / logs[r], std::ios::binary);
      write_collision_log(os, sim.log(), c.gas.geom.dim, LogFormat::binary);
    }
  });
  run.time("simulate", sw.lap());
  if (!ok) return;
  auto& t = run.table("trees", {"replica", "root", "nodes", "edges", "internal", "depth",
                                "recollision", "admissible", "n1"});
  std::vector<double> per_replica;
  double total = 0.0, recolls = 0.0, adm = 0.0, size = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    double rr = 0.0;
    for (const auto& tr : rows[r]) {
      t.add({std::to_string(r), std::to_string(tr.root), std::to_string(tr.nodes),
             std::to_string(tr.edges), std::to_string(tr.internal), std::to_string(tr.depth),
             tr.recollision ? "1" : "0", tr.admissible ? "1" : "0",
             std::to_string(tr.first_slice)});
      rr += tr.recollision;
      adm += tr.admissible;
      size += static_cast<double>(tr.nodes);
    }
    total += static_cast<double>(rows[r].size());
    recolls += rr;
    per_replica.push_back(rr / static_cast<double>(rows[r].size()));
    if (!logs[r].empty()) run.m().outputs.push_back(logs[r]);
  }
  const double frac = recolls / total;
  // trees of one run share particles, so the spread is taken across replicas
  const double se = per_replica.size() >= 2
                        ? std::sqrt(stats::variance(per_replica) / per_replica.size())
                        : std::sqrt(frac * (1.0 - frac) / total);
  run.put("trees", total);
  run.put("recollision_fraction", frac);
  run.put("recollision_fraction_se", se);
  run.put("admissible_fraction", adm / total);
  run.put("mean_tree_size", size / total);
  run.put("mean_free_time", mft);
  run.check("admissible-trees", "agreement", adm / total >= 0.99, adm / total, 0.99,
            "n_k < a^k in every slice");
}

void lemma(Run& run) {
  const auto& c = run.cfg;
  const auto& a = c.analysis;
  const int d = c.gas.geom.dim;
  const double side = c.gas.geom.side;
  LemmaParameters base;
  base.E = a.lemma_E;
  base.eps0 = a.lemma_eps0;
  base.geom = c.gas.geom;
  const Vec x1 = d == 2 ? Vec{side / 2, side / 2} : Vec{side / 2, side / 2, side / 2};
  Vec x2 = x1 + Vec{2.0 * base.eps0, 0.5 * base.eps0, d == 3 ? 0.25 * base.eps0 : 0.0};
  const Vec v1 = a.lemma_E * (d == 2 ? Vec{0.25, 0.1} : Vec{0.25, 0.1, 0.05});

  std::uint64_t stream = 0;
  auto grid = [&](const std::vector<double>& ratios,
                  const std::vector<double>& deltas, const std::vector<double>& ts) {
    std::vector<LemmaPoint> pts;
    for (double e : ratios)
      for (double dl : deltas)
        for (double t : ts) {
          LemmaParameters p = base;
          p.eps = e * base.eps0;
          p.delta = dl;
          p.t = t;
          Rng rng(derive_seed(c.seed, stream++));
          pts.push_back({p, estimate_pathological_set(p, x1, x2, v1, a.lemma_samples, rng,
                                                      c.workers)});
        }
    return pts;
  };
  Stopwatch sw;
  const auto cal = grid(a.lemma_eps_ratio_cal, a.lemma_delta_cal, a.lemma_t_cal);
  const auto test = grid(a.lemma_eps_ratio_test, a.lemma_delta_test, a.lemma_t_test);
  run.time("grids", sw.lap());
  const double C = fit_lemma_constant(cal);

  auto& t = run.table("lemma", {"grid", "eps", "eps0", "delta", "t", "E", "estimate", "ci",
                                "measure_i", "measure_ii", "bound_unit", "bound", "within"});
  int passed = 0;
  double worst = 0.0;
  auto emit = [&](const char* label, const std::vector<LemmaPoint>& pts, bool count) {
    for (const auto& pt : pts) {
      LemmaParameters unit = pt.params;
      unit.C = 1.0;
      const double b1 = lemma_bound(unit);
      const bool within = pt.result.estimate <= C * b1;
      if (count) {
        passed += within;
        worst = std::max(worst, pt.result.estimate / (C * b1));
      }
      t.add({label, fmt(pt.params.eps), fmt(pt.params.eps0), fmt(pt.params.delta),
             fmt(pt.params.t), fmt(pt.params.E), fmt(pt.result.estimate), fmt(pt.result.ci),
             fmt(pt.result.measure_i), fmt(pt.result.measure_ii), fmt(b1), fmt(C * b1),
             within ? "1" : "0"});
    }
  };
  emit("calibration", cal, false);
  emit("test", test, true);

  // condition (i) alone: delta beyond t switches condition (ii) off
  auto& ex = run.table("exponent", {"eps", "measure_i", "hits_i", "samples"});
  std::vector<double> lx, ly;
  for (double e : a.lemma_exponent_ratios) {
    LemmaParameters p = base;
    p.eps = e * base.eps0;
    p.t = 1.0;
    p.delta = 2.0;
    Rng rng(derive_seed(c.seed, stream++));
    const auto r = estimate_pathological_set(p, x1, x2, v1, a.lemma_exponent_samples, rng,
                                             c.workers);
    ex.add({fmt(p.eps), fmt(r.measure_i), std::to_string(r.hits_i), std::to_string(r.samples)});
    if (r.hits_i > 0) {
      lx.push_back(std::log(p.eps));
      ly.push_back(std::log(r.measure_i));
    }
  }
  run.time("exponent", sw.lap());
  const double slope = lx.size() >= 2 ? stats::linear_fit(lx, ly).slope : kNaN;

  run.put("fitted_C", C);
  run.put("test_points", static_cast<double>(test.size()));
  run.put("test_points_within", passed);
  run.put("test_worst_ratio", worst);
  run.put("exponent_slope", slope);
  run.put("exponent_expected", d - 1);
  run.check("lemma-bound", "agreement", passed == static_cast<int>(test.size()), passed,
            static_cast<double>(test.size()), "test-grid estimates within the fitted bound");
  run.check("lemma-exponent", "agreement", std::abs(slope - (d - 1)) <= 0.3,
            std::abs(slope - (d - 1)), 0.3, "log-log slope of the collision component");
}

void heat(Run& run) {
  const auto& c = run.cfg;
  const auto& a = c.analysis;
  const int d = c.gas.geom.dim;
  const double lam = c.gas.geom.side;
  const std::size_t steps = steps_for(a.tau_max, a.dtau);
  const double dt = a.dtau * lam * lam;
  std::vector<std::vector<RescaledPath>> rescaled(static_cast<std::size_t>(c.replicas));
  Stopwatch sw;
  const bool ok = run.replicas([&](std::size_t r, ReplicaRecord& rec, Rng& rng) {
    Simulation sim(run.initial_state(rng), c.gas, run.sim_options(false));
    const auto paths = record_paths(run, sim, a.all_particles, dt, steps, rec);
    run.verify(sim, rec);
    for (const auto& p : paths) {
      rescaled[r].push_back(rescale_path(p, lam, a.dtau, a.dtau * static_cast<double>(steps)));
    }
  });
  run.time("simulate", sw.lap());
  if (!ok) return;
  std::vector<RescaledPath> all;
  for (auto& v : rescaled) std::move(v.begin(), v.end(), std::back_inserter(all));

  const auto spec = spectral_kappa(c);
  const double kap = spec.kappa / c.gas.density_factor();
  // Every particle of a run drifts with the run's center-of-mass velocity, a
  // draw of variance 1 / (beta N) per component, so the pooled mean carries it.
  const double drift = a.dtau * lam;
  const double common = drift * drift /
                        (c.gas.beta * static_cast<double>(c.gas.n) * d * c.replicas);
  const auto g = gaussianity_report(all, kap, d, 1, c.analysis.ks_alpha, a.tolerance, common);
  run.time("analysis", sw.lap());

  const auto& k = c.phi0.wavevector;
  const double k2 = static_cast<double>(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
  const double predicted = 4.0 * std::numbers::pi * std::numbers::pi * k2 * kap;
  auto& t = run.table("heat_mode", {"tau", "amplitude", "stderr", "predicted"});
  std::vector<double> taus, amps, ses;
  for (std::size_t s = 0; s <= steps; ++s) {
    std::vector<Vec> disp;
    disp.reserve(all.size());
    for (const auto& p : all) disp.push_back(p.xi[s] - p.xi[0]);
    const auto [amp, se] = mode_amplitude(disp, c.phi0.amplitude, k, d);
    const double tau = a.dtau * static_cast<double>(s);
    t.add({fmt(tau), fmt(amp), fmt(se), fmt(c.phi0.amplitude * std::exp(-predicted * tau))});
    if (s > 0) {
      taus.push_back(tau);
      amps.push_back(amp);
      ses.push_back(se);
    }
  }
  const auto fit = fit_mode_decay(taus, amps, ses);
  auto& gt = run.table("gaussianity", {"increments", "mean", "mean_p", "variance",
                                       "variance_ratio", "ks_statistic", "ks_p",
                                       "lag1_correlation", "lag1_p", "pass"});
  gt.add({std::to_string(g.increments), fmt(g.mean), fmt(g.mean_p), fmt(g.variance),
          fmt(g.variance_ratio), fmt(g.ks_statistic), fmt(g.ks_p), fmt(g.lag1_correlation),
          fmt(g.lag1_p), g.pass() ? "1" : "0"});

  run.put("kappa_spectral", kap);
  run.put("increments", static_cast<double>(g.increments));
  run.put("mean_p", g.mean_p);
  run.put("variance_ratio", g.variance_ratio);
  run.put("ks_p", g.ks_p);
  run.put("lag1_correlation", g.lag1_correlation);
  run.put("lag1_p", g.lag1_p);
  run.put("decay_rate", fit.rate);
  run.put("decay_rate_stderr", fit.rate_stderr);
  run.put("decay_rate_predicted", predicted);
  run.put("decay_rel_error", rel_diff(fit.rate, predicted));
  run.check("increment-mean", "agreement", g.mean_pass, g.mean_p, a.ks_alpha);
  run.check("increment-variance", "agreement", g.variance_pass, g.variance_ratio, a.tolerance);
  run.check("increment-normality", "agreement", g.normality_pass, g.ks_p, a.ks_alpha);
  run.check("increment-independence", "agreement", g.independence_pass, g.lag1_p, a.ks_alpha);
  run.check("heat-mode-decay", "agreement", rel_diff(fit.rate, predicted) <= a.tolerance,
            rel_diff(fit.rate, predicted), a.tolerance);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, bool write) {
  RunResult res;
  auto& m = res.manifest;
  m.experiment = config.experiment;
  m.version = HSDIFF_VERSION;
  m.config = config.to_ini();
  m.base_seed = config.seed;
  Run run{config, res, fs::path(config.out_dir), write, std::nullopt};
  if (write) fs::create_directories(run.out);
  Stopwatch total;
  if (config.uses_gas() && config.phi0_family == "cosine") {
    auto w = cosine_bump_weight(config.phi0, config.gas.geom, config.gas.beta);
    check_normalization(w, config.gas.geom, config.gas.beta);
    run.weight = std::move(w);
  }
  try {
    if (config.experiment == "equilibrium-check") equilibrium_check(run);
    else if (config.experiment == "msd") msd(run);
    else if (config.experiment == "compare-levels") compare_levels(run);
    else if (config.experiment == "kappa") kappa(run);
    else if (config.experiment == "trees") trees(run);
    else if (config.experiment == "lemma") lemma(run);
    else if (config.experiment == "heat") heat(run);
    else throw ConfigError("unknown experiment " + config.experiment);
  } catch (const ConfigError&) {
    throw;
  } catch (const InvariantFailure& e) {
    m.status = "invariant-failed";
    m.failure = e.what();
  } catch (const std::exception& e) {
    m.status = "failed";
    m.failure = e.what();
  }
  if (m.status == "ok") {
    if (!m.invariants_ok()) m.status = "invariant-failed";
    else if (!m.all_checks_pass()) m.status = "checks-failed";
  }
  run.time("total", total.lap());
  if (write) {
    for (const auto& t : res.tables) write_table(t, run.out, config.format, m.outputs);
    std::ofstream(run.out / "config.ini") << m.config;
    m.outputs.push_back("config.ini");
    m.outputs.push_back("manifest.json");
    std::ofstream(run.out / "manifest.json") << m.to_json();
    write_timings(res.timings, run.out);
  }
  return res;
}

std::vector<SweepPoint> sweep(const ExperimentConfig& config, const std::string& key,
                              const std::vector<std::string>& values, bool write) {
  std::vector<SweepPoint> points;
  for (const auto& v : values) {
    SweepPoint pt;
    pt.value = v;
    try {
      auto entries = with_entry(config.entries, key, v);
      entries = with_entry(entries, "output.dir",
                           (fs::path(config.out_dir) / (key + "=" + v)).string());
      const auto c = resolve_config(entries);
      auto res = run_experiment(c, write);
      pt.manifest = std::move(res.manifest);
      pt.ok = pt.manifest.status == "ok" || pt.manifest.status == "checks-failed";
      if (!pt.ok) pt.error = pt.manifest.failure;
    } catch (const std::exception& e) {
      pt.ok = false;
      pt.error = e.what();
    }
    points.push_back(std::move(pt));
  }
  if (write) {
    fs::create_directories(config.out_dir);
    std::vector<std::string> inventory;
    write_table(sweep_table(key, points), config.out_dir, "csv", inventory);
  }
  return points;
}

Table sweep_table(const std::string& key, const std::vector<SweepPoint>& points) {
  Table t{"sweep", {"key", "value", "n", "eps", "side", "dim", "status", "metric", "metric_value",
                    "error"}, {}};
  for (const auto& pt : points) {
    std::string n, eps, side, dim;
    if (!pt.manifest.config.empty()) {
      const auto c = parse_config(pt.manifest.config);
      if (c.uses_gas()) {
        n = std::to_string(c.gas.n);
        eps = fmt(c.gas.eps);
      }
      side = fmt(c.gas.geom.side);
      dim = std::to_string(c.gas.geom.dim);
    }
    const std::string status = pt.ok ? pt.manifest.status : "error";
    if (pt.manifest.summary.empty()) {
      t.add({key, pt.value, n, eps, side, dim, status, "", "", pt.error});
      continue;
    }
    for (const auto& [m, v] : pt.manifest.summary) {
      t.add({key, pt.value, n, eps, side, dim, status, m, fmt(v), pt.error});
    }
  }
  return t;
}

MaximumPrincipleCheck maximum_principle_check(std::span<const ParticleState> tagged,
                                              const TorusGeometry& geom, double beta,
                                              double bound) {
  MaximumPrincipleCheck out;
  out.samples = tagged.size();
  if (tagged.empty()) return out;
  const int d = geom.dim;
  const int pos_cells = 1 << d;
  const double q = 0.6744897501960817 / std::sqrt(beta);  // normal quartile
  std::vector<double> count(static_cast<std::size_t>(pos_cells * 4), 0.0);
  for (const auto& z : tagged) {
    const Vec x = reduce(z.position, geom);
    int cell = 0;
    for (int k = 0; k < d; ++k) cell = 2 * cell + (x[k] >= 0.5 * geom.side ? 1 : 0);
    const double v = z.velocity[0];
    const int vb = v < -q ? 0 : v < 0.0 ? 1 : v < q ? 2 : 3;
    count[static_cast<std::size_t>(cell * 4 + vb)] += 1.0;
  }
  const double n = static_cast<double>(tagged.size());
  const double p = std::min(1.0, bound / (4.0 * pos_cells));
  const double sd = std::sqrt(std::max(p * (1.0 - p), 1e-300) / n);
  // the normal 4 sd rule misfires for small n; pass/fail uses the exact
  // binomial tail at the same one-sided level
  const double level = stats::normal_cdf(-4.0);
  out.max_excess_sigma = -std::numeric_limits<double>::infinity();
  out.pass = true;
  for (double c : count) {
    out.max_excess_sigma = std::max(out.max_excess_sigma, (c / n - p) / sd);
    if (c > 0.0 && p < 1.0 && boost::math::ibeta(c, n - c + 1.0, p) < level) out.pass = false;
  }
  return out;
}

}  // namespace hsdiff
