// Command line front end: one subcommand per experiment, plus sweep and resolve.
//
// Exit codes: 0 success (agreement checks may still have failed, see the
// manifest status), 1 runtime error, 2 configuration error, 3 invariant failure.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "hsdiff/error.hpp"
#include "hsdiff/harness.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string out;
  int workers = 0;
  long long seed = -1;
  std::string format;
};

hsdiff::ConfigEntries load(const Overrides& o, const std::string& experiment) {
  std::ifstream is(o.config);
  if (!is) throw hsdiff::ConfigError("cannot read config file " + o.config);
  std::stringstream ss;
  ss << is.rdbuf();
  auto e = hsdiff::parse_ini(ss.str());
  if (!experiment.empty()) {
    for (const auto& [k, v] : e) {
      if (k == "experiment.name" && v != experiment) {
        throw hsdiff::ConfigError("config is for experiment '" + v + "', not '" + experiment + "'");
      }
    }
    e = hsdiff::with_entry(e, "experiment.name", experiment);
  }
  if (!o.out.empty()) e = hsdiff::with_entry(e, "output.dir", o.out);
  if (o.workers > 0) e = hsdiff::with_entry(e, "ensemble.workers", std::to_string(o.workers));
  if (o.seed >= 0) e = hsdiff::with_entry(e, "ensemble.seed", std::to_string(o.seed));
  if (!o.format.empty()) e = hsdiff::with_entry(e, "output.format", o.format);
  return e;
}

int report(const hsdiff::RunManifest& m) {
  std::cout << "experiment " << m.experiment << ": " << m.status << '\n';
  if (!m.failure.empty()) std::cout << "failure: " << m.failure << '\n';
  for (const auto& c : m.checks) {
    std::cout << (c.pass ? "  pass  " : "  FAIL  ") << c.name << " (" << c.kind << ") value "
              << hsdiff::fmt(c.value) << " threshold " << hsdiff::fmt(c.threshold) << '\n';
  }
  for (const auto& [k, v] : m.summary) std::cout << "  " << k << " = " << hsdiff::fmt(v) << '\n';
  if (m.status == "invariant-failed") return 3;
  if (m.status == "failed") return 1;
  return 0;
}

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "INI configuration file")->required();
  sub->add_option("--out", o.out, "output directory (overrides output.dir)");
  sub->add_option("--workers", o.workers, "concurrent replicas")->check(CLI::PositiveNumber);
  sub->add_option("--seed", o.seed, "base seed (overrides ensemble.seed)")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--format", o.format, "table format")->check(CLI::IsMember({"csv", "json"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hard-sphere gas to Brownian motion: simulation and cross-validation"};
  app.require_subcommand(1);
  Overrides o;
  std::string experiment;
  for (const char* name : {"equilibrium-check", "msd", "compare-levels", "kappa", "trees", "lemma",
                           "heat"}) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    add_common(sub, o);
    sub->callback([&experiment, name] { experiment = name; });
  }
  std::string key, values;
  auto* sw = app.add_subcommand("sweep", "run the configured experiment across one parameter");
  add_common(sw, o);
  sw->add_option("--key", key, "section.key to vary, e.g. gas.eps")->required();
  sw->add_option("--values", values, "comma-separated values")->required();
  auto* resolve = app.add_subcommand("resolve", "print the resolved configuration");
  resolve->add_option("--config", o.config, "INI configuration file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (resolve->parsed()) {
      std::cout << hsdiff::resolve_config(load(o, "")).to_ini();
      return 0;
    }
    if (sw->parsed()) {
      const auto cfg = hsdiff::resolve_config(load(o, ""));
      std::vector<std::string> list;
      std::stringstream ss(values);
      for (std::string v; std::getline(ss, v, ',');) list.push_back(v);
      const auto points = hsdiff::sweep(cfg, key, list, true);
      int code = 0;
      for (const auto& p : points) {
        std::cout << key << " = " << p.value << ": "
                  << (p.ok ? p.manifest.status : "error: " + p.error) << '\n';
        if (!p.ok) code = std::max(code, p.manifest.status == "invariant-failed" ? 3 : 1);
      }
      std::cout << "wrote " << cfg.out_dir << "/sweep.csv\n";
      return code;
    }
    const auto cfg = hsdiff::resolve_config(load(o, experiment));
    const auto res = hsdiff::run_experiment(cfg, true);
    const int code = report(res.manifest);
    std::cout << "wrote " << cfg.out_dir << '\n';
    return code;
  } catch (const hsdiff::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const hsdiff::InvariantFailure& e) {
    std::cerr << "invariant failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
