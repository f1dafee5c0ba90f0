#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hsdiff/error.hpp"
#include "hsdiff/harness.hpp"
#include "hsdiff/linear_boltzmann.hpp"
#include "hsdiff/rng.hpp"

namespace hsdiff {

namespace {

struct KeyDef {
  const char* key;
  const char* def;
};

// Every accepted key with its default; "" means required where used.
constexpr KeyDef kKeys[] = {
    {"experiment.name", ""},
    {"gas.dim", "2"},
    {"gas.side", "8"},
    {"gas.eps", ""},
    {"gas.n", "auto"},
    {"gas.beta", "1"},
    {"gas.cell_side_min", "0"},
    {"scaling.rule", "boltzmann-grad"},
    {"scaling.tolerance", "0.01"},
    {"phi0.family", "uniform"},
    {"phi0.amplitude", "0.5"},
    {"phi0.mode", "1,0,0"},
    {"phi0.velocity_cutoff", "0"},
    {"ensemble.replicas", "1"},
    {"ensemble.seed", "1"},
    {"ensemble.workers", "1"},
    {"analysis.duration_mft", "100"},
    {"analysis.dt_mft", "1"},
    {"analysis.fit_lo_mft", "10"},
    {"analysis.fit_hi_mft", "100"},
    {"analysis.particles", "all"},
    {"analysis.checkpoints", "10"},
    {"analysis.ks_alpha", "0.01"},
    {"analysis.ks_pass_fraction", "0.95"},
    {"analysis.drift_tol", "1e-8"},
    {"analysis.tolerance", "0.1"},
    {"analysis.grid_div", "12"},
    {"analysis.angular_order", "0"},
    {"analysis.dense_max_nodes", "2500"},
    {"analysis.kappa_paths", "200"},
    {"analysis.kappa_duration_mft", "2000"},
    {"analysis.kappa_dt_mft", "0.1"},
    {"analysis.jump_paths", "2000"},
    {"analysis.window_mft", "5"},
    {"analysis.tau_mft", "0.1"},
    {"analysis.branching_a", "3"},
    {"analysis.roots", "0"},
    {"analysis.dtau", "0.02"},
    {"analysis.tau_max", "0.2"},
    {"analysis.lemma_E", "1"},
    {"analysis.lemma_eps0", "0.05"},
    {"analysis.lemma_samples", "200000"},
    {"analysis.lemma_eps_ratio_cal", "0.25,0.0625,0.015625"},
    {"analysis.lemma_eps_ratio_test", "0.125,0.09,0.03125"},
    {"analysis.lemma_delta_cal", "1,0.25,0.0625"},
    {"analysis.lemma_delta_test", "0.5,0.3,0.1"},
    {"analysis.lemma_t_cal", "0.25,1,4"},
    {"analysis.lemma_t_test", "0.5,1.5,3"},
    {"analysis.lemma_exponent_ratios", "0.125,0.0625,0.03125"},
    {"analysis.lemma_exponent_samples", "1000000"},
    {"output.dir", "out"},
    {"output.format", "csv"},
    {"output.log", "false"},
};

const std::set<std::string> kExperiments{"equilibrium-check", "msd",    "compare-levels", "kappa",
                                         "trees",             "lemma", "heat"};

bool known_key(const std::string& k) {
  return std::any_of(std::begin(kKeys), std::end(kKeys),
                     [&](const KeyDef& d) { return k == d.key; });
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

class Reader {
 public:
  explicit Reader(const ConfigEntries& e) : entries_(e) {}

  std::string str(const std::string& key) const {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->first == key) return it->second;
    }
    for (const auto& d : kKeys) {
      if (key == d.key) return d.def;
    }
    throw ContractViolation("unregistered key " + key);
  }

  double real(const std::string& key) const {
    const auto s = str(key);
    try {
      std::size_t pos = 0;
      const double x = std::stod(s, &pos);
      if (pos == s.size() && std::isfinite(x)) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }

  long integer(const std::string& key) const {
    const auto s = str(key);
    try {
      std::size_t pos = 0;
      const long x = std::stol(s, &pos);
      if (pos == s.size()) return x;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected an integer, got '" + s + "'");
  }

  bool boolean(const std::string& key) const {
    const auto s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + s + "'");
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      try {
        std::size_t pos = 0;
        const double x = std::stod(item, &pos);
        if (pos != item.size() || !std::isfinite(x)) throw ConfigError("");
        out.push_back(x);
      } catch (const std::exception&) {
        throw ConfigError(key + ": expected a comma-separated list of numbers");
      }
    }
    return out;
  }

 private:
  const ConfigEntries& entries_;
};

void check(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace

ConfigEntries parse_ini(const std::string& text) {
  // boost's INI reader only knows ';' comments
  std::stringstream in(text), cleaned;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (!t.empty() && t[0] == '#') continue;
    cleaned << line << '\n';
  }
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(cleaned, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  ConfigEntries out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key outside a section: " + section);
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      if (!known_key(full)) throw ConfigError("unknown key " + full);
      out.emplace_back(full, trim(value.data()));
    }
  }
  return out;
}

ConfigEntries with_entry(ConfigEntries entries, const std::string& key, const std::string& value) {
  if (!known_key(key)) throw ConfigError("unknown key " + key);
  for (auto& [k, v] : entries) {
    if (k == key) {
      v = value;
      return entries;
    }
  }
  entries.emplace_back(key, value);
  return entries;
}

ExperimentConfig resolve_config(const ConfigEntries& entries) {
  for (const auto& [k, v] : entries) check(known_key(k), "unknown key " + k);
  const Reader r(entries);
  ExperimentConfig c;
  c.experiment = r.str("experiment.name");
  check(!c.experiment.empty(), "experiment.name is required");
  check(kExperiments.contains(c.experiment), "experiment.name: unknown experiment '" +
                                                 c.experiment + "'");

  const long dim = r.integer("gas.dim");
  check(dim == 2 || dim == 3, "gas.dim must be 2 or 3");
  c.gas.geom = {r.real("gas.side"), static_cast<int>(dim)};
  c.gas.beta = r.real("gas.beta");
  check(c.gas.beta > 0.0, "gas.beta must be positive");
  check(c.gas.geom.side >= 1.0, "gas.side must be at least 1");
  c.cell_side_min = r.real("gas.cell_side_min");
  check(c.cell_side_min >= 0.0, "gas.cell_side_min must be nonnegative");
  c.scaling_rule = r.str("scaling.rule");
  check(c.scaling_rule == "boltzmann-grad" || c.scaling_rule == "none",
        "scaling.rule must be boltzmann-grad or none");
  c.scaling_tolerance = r.real("scaling.tolerance");
  check(c.scaling_tolerance > 0.0, "scaling.tolerance must be positive");

  if (c.uses_gas()) {
    const auto eps_text = r.str("gas.eps");
    check(!eps_text.empty(), "gas.eps is required for experiment " + c.experiment);
    c.gas.eps = r.real("gas.eps");
    check(c.gas.eps > 0.0, "gas.eps must be positive");
    const double d = static_cast<double>(dim);
    const double rule_n = std::pow(c.gas.geom.side, d) / std::pow(c.gas.eps, d - 1.0);
    const auto n_text = r.str("gas.n");
    c.n_from_scaling = n_text == "auto";
    if (c.n_from_scaling) {
      check(c.scaling_rule == "boltzmann-grad", "gas.n is required when scaling.rule = none");
      check(rule_n < 1e9, "scaling rule gives N = " + std::to_string(rule_n) + ", too large");
      c.gas.n = static_cast<std::size_t>(std::llround(rule_n));
    } else {
      const long n = r.integer("gas.n");
      check(n >= 2, "gas.n must be at least 2");
      c.gas.n = static_cast<std::size_t>(n);
    }
    if (c.scaling_rule == "boltzmann-grad") {
      const double f = c.gas.density_factor();
      check(std::abs(f - 1.0) <= c.scaling_tolerance,
            "scaling rule N eps^(d-1) / side^d = 1 violated: got " + std::to_string(f));
    }
    c.gas.validate();
  }

  c.phi0_family = r.str("phi0.family");
  check(c.phi0_family == "uniform" || c.phi0_family == "cosine",
        "phi0.family must be uniform or cosine");
  c.phi0.amplitude = r.real("phi0.amplitude");
  const auto mode = r.list("phi0.mode");
  check(mode.size() == 3, "phi0.mode needs three integers");
  for (int k = 0; k < 3; ++k) {
    check(mode[k] == std::round(mode[k]), "phi0.mode entries must be integers");
    c.phi0.wavevector[k] = static_cast<int>(mode[k]);
  }
  check(dim == 3 || c.phi0.wavevector[2] == 0, "phi0.mode has a third component in d = 2");
  check(c.phi0.wavevector != std::array<int, 3>{0, 0, 0}, "phi0.mode must be nonzero");
  c.phi0.velocity_cutoff = r.real("phi0.velocity_cutoff");
  check(c.phi0.velocity_cutoff >= 0.0, "phi0.velocity_cutoff must be nonnegative");
  check(c.phi0_family != "cosine" || std::abs(c.phi0.amplitude) < 1.0,
        "phi0.amplitude must lie in (-1, 1)");

  const long replicas = r.integer("ensemble.replicas");
  check(replicas >= 1, "ensemble.replicas must be at least 1");
  c.replicas = static_cast<int>(replicas);
  const long seed = r.integer("ensemble.seed");
  check(seed >= 0, "ensemble.seed must be nonnegative");
  c.seed = static_cast<std::uint64_t>(seed);
  const long workers = r.integer("ensemble.workers");
  check(workers >= 1, "ensemble.workers must be at least 1");
  c.workers = static_cast<int>(workers);

  auto& a = c.analysis;
  a.duration_mft = r.real("analysis.duration_mft");
  a.dt_mft = r.real("analysis.dt_mft");
  a.fit_lo_mft = r.real("analysis.fit_lo_mft");
  a.fit_hi_mft = r.real("analysis.fit_hi_mft");
  const auto particles = r.str("analysis.particles");
  check(particles == "all" || particles == "tagged", "analysis.particles must be all or tagged");
  a.all_particles = particles == "all";
  a.checkpoints = static_cast<int>(r.integer("analysis.checkpoints"));
  a.ks_alpha = r.real("analysis.ks_alpha");
  a.ks_pass_fraction = r.real("analysis.ks_pass_fraction");
  a.drift_tol = r.real("analysis.drift_tol");
  a.tolerance = r.real("analysis.tolerance");
  a.grid_div = static_cast<int>(r.integer("analysis.grid_div"));
  a.angular_order = static_cast<int>(r.integer("analysis.angular_order"));
  a.dense_max_nodes = static_cast<int>(r.integer("analysis.dense_max_nodes"));
  a.kappa_paths = static_cast<int>(r.integer("analysis.kappa_paths"));
  a.kappa_duration_mft = r.real("analysis.kappa_duration_mft");
  a.kappa_dt_mft = r.real("analysis.kappa_dt_mft");
  a.jump_paths = static_cast<int>(r.integer("analysis.jump_paths"));
  a.window_mft = r.real("analysis.window_mft");
  a.tau_mft = r.real("analysis.tau_mft");
  a.branching_a = r.real("analysis.branching_a");
  a.roots = static_cast<int>(r.integer("analysis.roots"));
  a.dtau = r.real("analysis.dtau");
  a.tau_max = r.real("analysis.tau_max");
  a.lemma_E = r.real("analysis.lemma_E");
  a.lemma_eps0 = r.real("analysis.lemma_eps0");
  const long ls = r.integer("analysis.lemma_samples");
  const long les = r.integer("analysis.lemma_exponent_samples");
  check(ls >= 1 && les >= 1, "lemma sample counts must be positive");
  a.lemma_samples = static_cast<std::uint64_t>(ls);
  a.lemma_exponent_samples = static_cast<std::uint64_t>(les);
  a.lemma_eps_ratio_cal = r.list("analysis.lemma_eps_ratio_cal");
  a.lemma_eps_ratio_test = r.list("analysis.lemma_eps_ratio_test");
  a.lemma_delta_cal = r.list("analysis.lemma_delta_cal");
  a.lemma_delta_test = r.list("analysis.lemma_delta_test");
  a.lemma_t_cal = r.list("analysis.lemma_t_cal");
  a.lemma_t_test = r.list("analysis.lemma_t_test");
  a.lemma_exponent_ratios = r.list("analysis.lemma_exponent_ratios");

  check(a.duration_mft > 0.0, "analysis.duration_mft must be positive");
  check(a.dt_mft > 0.0, "analysis.dt_mft must be positive");
  check(a.fit_lo_mft >= 10.0, "analysis.fit_lo_mft must be at least 10 mean free times");
  check(a.fit_hi_mft > a.fit_lo_mft, "analysis.fit_hi_mft must exceed fit_lo_mft");
  if (c.experiment == "msd" || c.experiment == "compare-levels") {
    check(a.dt_mft <= a.duration_mft, "analysis.dt_mft exceeds analysis.duration_mft");
    check(a.fit_hi_mft <= a.duration_mft * (1.0 + 1e-12),
          "analysis.fit_hi_mft exceeds analysis.duration_mft");
  }
  check(a.checkpoints >= 1, "analysis.checkpoints must be at least 1");
  check(a.ks_alpha > 0.0 && a.ks_alpha < 1.0, "analysis.ks_alpha must lie in (0, 1)");
  check(a.ks_pass_fraction >= 0.0 && a.ks_pass_fraction <= 1.0,
        "analysis.ks_pass_fraction must lie in [0, 1]");
  check(a.drift_tol > 0.0 && a.tolerance > 0.0, "tolerances must be positive");
  check(a.grid_div >= 4, "analysis.grid_div must be at least 4");
  check(a.angular_order >= 0, "analysis.angular_order must be nonnegative");
  check(a.kappa_paths >= 2 && a.jump_paths >= 2, "need at least two jump paths");
  check(a.kappa_duration_mft > 0.0 && a.kappa_dt_mft > 0.0, "kappa path lengths must be positive");
  check(a.window_mft > 0.0 && a.tau_mft > 0.0, "tree window and slice must be positive");
  check(a.branching_a > 1.0, "analysis.branching_a must exceed 1");
  check(a.roots >= 0, "analysis.roots must be nonnegative");
  check(a.dtau > 0.0 && a.tau_max >= a.dtau, "need 0 < dtau <= tau_max");
  if (c.experiment == "lemma") {
    check(a.lemma_E > 0.0, "analysis.lemma_E must be positive");
    check(a.lemma_eps0 > 0.0 && 3.0 * a.lemma_eps0 < c.gas.geom.side,
          "analysis.lemma_eps0 must lie in (0, side/3)");
    for (const auto* v : {&a.lemma_eps_ratio_cal, &a.lemma_eps_ratio_test,
                          &a.lemma_exponent_ratios}) {
      check(!v->empty(), "lemma grids must be nonempty");
      for (double x : *v) check(x > 0.0 && x < 1.0, "lemma eps ratios must lie in (0, 1)");
    }
    for (const auto* v : {&a.lemma_delta_cal, &a.lemma_delta_test, &a.lemma_t_cal,
                          &a.lemma_t_test}) {
      check(!v->empty(), "lemma grids must be nonempty");
      for (double x : *v) check(x > 0.0, "lemma delta and t must be positive");
    }
    check(a.lemma_exponent_ratios.size() >= 2, "need two exponent ratios");
    bool overlap = false;
    for (double e : a.lemma_eps_ratio_test)
      for (double dl : a.lemma_delta_test)
        for (double t : a.lemma_t_test) {
          const auto in = [](const std::vector<double>& v, double x) {
            return std::find(v.begin(), v.end(), x) != v.end();
          };
          overlap = overlap || (in(a.lemma_eps_ratio_cal, e) && in(a.lemma_delta_cal, dl) &&
                                in(a.lemma_t_cal, t));
        }
    check(!overlap, "lemma calibration and test grids must be disjoint");
  }

  c.out_dir = r.str("output.dir");
  check(!c.out_dir.empty(), "output.dir must be nonempty");
  c.format = r.str("output.format");
  check(c.format == "csv" || c.format == "json", "output.format must be csv or json");
  c.write_log = r.boolean("output.log");

  for (const auto& d : kKeys) c.entries.emplace_back(d.key, r.str(d.key));
  return c;
}

ExperimentConfig parse_config(const std::string& text) { return resolve_config(parse_ini(text)); }

bool ExperimentConfig::uses_gas() const { return experiment != "kappa" && experiment != "lemma"; }

double ExperimentConfig::mean_free_time() const {
  const double f = uses_gas() ? gas.density_factor() : 1.0;
  return 1.0 / (mean_collision_rate(gas.beta, gas.geom.dim) * f);
}

std::string ExperimentConfig::to_ini() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, value] : entries) {
    const auto dot = key.find('.');
    const auto s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    std::string v = value;
    if (key == "gas.n" && uses_gas()) v = std::to_string(gas.n);
    if (key == "gas.n" && uses_gas() && n_from_scaling) os << "; derived from the scaling rule\n";
    os << key.substr(dot + 1) << " = " << v << '\n';
  }
  return os.str();
}

std::uint64_t replica_seed(std::uint64_t base, std::size_t r) { return derive_seed(base, r); }

}  // namespace hsdiff
