#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hsdiff/equilibrium.hpp"

namespace hsdiff {

/// Raw configuration: "section.key" -> value text, in file order.
using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

struct AnalysisConfig {
  double duration_mft = 100.0;  // MD run length
  double dt_mft = 1.0;          // path sampling step
  double fit_lo_mft = 10.0;
  double fit_hi_mft = 100.0;
  bool all_particles = true;  // MSD over every particle instead of the tagged one
  int checkpoints = 10;
  double ks_alpha = 0.01;
  double ks_pass_fraction = 0.95;
  double drift_tol = 1e-8;
  double tolerance = 0.1;  // relative agreement target for cross-level comparisons
  // kappa
  int grid_div = 12;
  int angular_order = 0;
  int dense_max_nodes = 2500;
  int kappa_paths = 200;
  double kappa_duration_mft = 2000.0;
  double kappa_dt_mft = 0.1;
  int jump_paths = 2000;  // compare-levels
  // trees
  double window_mft = 5.0;
  double tau_mft = 0.1;
  double branching_a = 3.0;
  int roots = 0;  // trees per replica, 0 for every particle
  // heat
  double dtau = 0.02;
  double tau_max = 0.2;
  // lemma
  double lemma_E = 1.0;
  double lemma_eps0 = 0.05;
  std::uint64_t lemma_samples = 200000;
  std::vector<double> lemma_eps_ratio_cal, lemma_eps_ratio_test;
  std::vector<double> lemma_delta_cal, lemma_delta_test;
  std::vector<double> lemma_t_cal, lemma_t_test;
  std::vector<double> lemma_exponent_ratios;
  std::uint64_t lemma_exponent_samples = 1000000;
};

struct ExperimentConfig {
  std::string experiment;
  GasParameters gas;
  bool n_from_scaling = true;
  double cell_side_min = 0.0;
  std::string scaling_rule = "boltzmann-grad";
  double scaling_tolerance = 0.01;
  std::string phi0_family = "uniform";
  CosineBumpSpec phi0;
  int replicas = 1;
  std::uint64_t seed = 1;
  int workers = 1;
  AnalysisConfig analysis;
  std::string out_dir = "out";
  std::string format = "csv";
  bool write_log = false;

  ConfigEntries entries;  // resolved values of every known key

  /// Resolved configuration as INI text, defaults included.
  std::string to_ini() const;
  double mean_free_time() const;
  bool uses_gas() const;
};

/// Parses INI text ([section] headers, key = value, ';' or '#' comments).
/// Unknown sections or keys, malformed values and invariant violations throw
/// ConfigError naming the offending key. Under the boltzmann-grad rule a
/// missing gas.n is set to round(side^d / eps^(d-1)); an explicit n must
/// satisfy the rule within scaling.tolerance.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig resolve_config(const ConfigEntries& entries);
ConfigEntries parse_ini(const std::string& text);

/// Copy of `entries` with one key replaced (added if absent).
ConfigEntries with_entry(ConfigEntries entries, const std::string& key, const std::string& value);

/// Seed of replica r: derive_seed(base, r).
std::uint64_t replica_seed(std::uint64_t base, std::size_t r);

/// Simple string table written as CSV or JSON.
struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row);
};

/// Shortest decimal that round-trips a double.
std::string fmt(double x);

struct ReplicaRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  std::uint64_t events = 0;
  std::uint64_t collisions = 0;
  bool ok = true;
  std::string error;
  std::string dump;  // state dump file, on invariant failure
};

struct CheckRecord {
  std::string name;
  std::string kind;  // "invariant" or "agreement"
  bool pass = false;
  double value = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct RunManifest {
  std::string experiment;
  std::string version;
  std::string config;  // resolved INI
  std::uint64_t base_seed = 0;
  std::vector<ReplicaRecord> replicas;
  std::vector<std::string> outputs;
  std::vector<CheckRecord> checks;
  std::vector<std::pair<std::string, double>> summary;
  // ok, checks-failed (an agreement check failed), invariant-failed, failed
  std::string status = "ok";
  std::string failure;

  bool invariants_ok() const;
  bool all_checks_pass() const;
  double metric(const std::string& key) const;
  std::string to_json() const;
};

struct RunResult {
  RunManifest manifest;
  std::vector<Table> tables;
  std::vector<std::pair<std::string, double>> timings;  // seconds, not part of the manifest
};

/// Runs the configured experiment. When `write` is set the tables, the
/// manifest (manifest.json) and timings (timings.json) go to out_dir.
RunResult run_experiment(const ExperimentConfig& config, bool write = true);

struct SweepPoint {
  std::string value;
  bool ok = false;
  std::string error;
  RunManifest manifest;
};

/// One run per value of `key`, each in out_dir/<key>=<value>. Failures are
/// recorded and the sweep continues. Writes sweep.csv (long format) into
/// out_dir when `write` is set.
std::vector<SweepPoint> sweep(const ExperimentConfig& config, const std::string& key,
                              const std::vector<std::string>& values, bool write = true);

/// Long-format table: key, value, n, eps, side, dim, status, metric, metric_value.
Table sweep_table(const std::string& key, const std::vector<SweepPoint>& points);

struct MaximumPrincipleCheck {
  std::size_t samples = 0;
  double max_excess_sigma = 0.0;  // largest (observed - bound) / sd over cells
  bool pass = true;
};

/// Empirical tagged phase-space histogram against bound * (uniform x M_beta):
/// 2 position cells per axis times 4 equiprobable bins of the first velocity
/// component. A cell fails when its count is above the bound with binomial
/// tail probability below that of 4 sd of a normal law.
MaximumPrincipleCheck maximum_principle_check(std::span<const ParticleState> tagged,
                                              const TorusGeometry& geom, double beta,
                                              double bound);

}  // namespace hsdiff
