#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "hsdiff/error.hpp"
#include "hsdiff/harness.hpp"

using namespace hsdiff;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("hsdiff_test_" + name);
  fs::remove_all(p);
  return p;
}

// packing 0.1: the excluded-volume excess of the collision rate stays near 4%
std::string small_gas(const std::string& duration = "20", const std::string& replicas = "2") {
  return "[experiment]\nname = equilibrium-check\n[gas]\nside = 4\neps = 0.03125\n"
         "[ensemble]\nreplicas = " + replicas + "\nseed = 42\n"
         "[analysis]\nduration_mft = " + duration + "\ncheckpoints = 4\n";
}

}  // namespace

TEST_CASE("minimal config resolves every default and echoes back") {
  const auto c = parse_config("[experiment]\nname = kappa\n");
  CHECK(c.experiment == "kappa");
  CHECK(c.gas.geom.dim == 2);
  CHECK(c.replicas == 1);
  CHECK(c.analysis.grid_div == 12);
  const auto echo = c.to_ini();
  CHECK(echo.find("[analysis]") != std::string::npos);
  CHECK(echo.find("grid_div = 12") != std::string::npos);
  const auto again = parse_config(echo);
  CHECK(again.to_ini() == echo);
}

TEST_CASE("scaling block derives N") {
  const auto c = parse_config(
      "[experiment]\nname = msd\n[gas]\ndim = 2\nside = 16\neps = 0.00390625\n");
  CHECK(c.gas.n == 65536);
  CHECK(c.n_from_scaling);
  CHECK(c.to_ini().find("n = 65536") != std::string::npos);
  const auto c3 = parse_config("[experiment]\nname = msd\n[gas]\ndim = 3\nside = 8\neps = 0.0625\n");
  CHECK(c3.gas.n == 131072);
}

TEST_CASE("config errors name the violated invariant") {
  auto msg = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  // eps >= side / 4
  CHECK(msg("[experiment]\nname = msd\n[gas]\nside = 4\neps = 1.5\nn = 3\n[scaling]\nrule = none\n")
            .find("eps") != std::string::npos);
  CHECK(msg("[experiment]\nname = msd\n[gas]\nside = 4\neps = 0.0625\nn = 262\n").find("scaling") !=
        std::string::npos);
  CHECK(msg("[experiment]\nname = msd\n[gas]\nside = 4\neps = 0.0625\nn = 256\n") == "no error");
  CHECK(msg("[experiment]\nname = msd\n[gas]\nside = 4\neps = 0.0625\nn = 258\n") == "no error");
  CHECK(msg("[experiment]\nname = msd\n[gas]\nside = 4\nepsilon = 0.25\n").find("unknown key") !=
        std::string::npos);
  CHECK(msg("[experiment]\nname = msd\n[colour]\nred = 1\n").find("unknown key") !=
        std::string::npos);
  CHECK(msg("[experiment]\nname = fly\n").find("unknown experiment") != std::string::npos);
  CHECK(msg("[experiment]\nname = msd\n").find("gas.eps") != std::string::npos);
  CHECK(msg("[experiment]\nname = kappa\n[gas]\nbeta = x\n").find("gas.beta") !=
        std::string::npos);
  CHECK(msg("[experiment]\nname = kappa\n[output]\nformat = xml\n").find("format") !=
        std::string::npos);
  CHECK(msg("[experiment]\nname = lemma\n[analysis]\nlemma_t_test = 4\nlemma_delta_test = 1\n"
            "lemma_eps_ratio_test = 0.25\n")
            .find("disjoint") != std::string::npos);
  CHECK(msg("# comment\n[experiment]\nname = kappa ; trailing\n").find("unknown experiment") !=
        std::string::npos);
  CHECK(msg("# comment\n[experiment]\n; other\nname = kappa\n") == "no error");
}

TEST_CASE("replica seeds are distinct and reproducible") {
  std::set<std::uint64_t> seen;
  for (std::size_t r = 0; r < 10000; ++r) seen.insert(replica_seed(7, r));
  CHECK(seen.size() == 10000);
  CHECK(replica_seed(7, 3) == replica_seed(7, 3));
  CHECK(replica_seed(7, 3) != replica_seed(8, 3));
}

TEST_CASE("equilibrium check: manifest, checks and determinism across workers") {
  auto c = parse_config(small_gas());
  const auto r1 = run_experiment(c, false);
  const auto& m = r1.manifest;
  CHECK(m.status == "ok");
  REQUIRE(m.replicas.size() == 2);
  CHECK(m.replicas[0].seed != m.replicas[1].seed);
  CHECK(m.replicas[0].collisions > 0);
  CHECK(m.metric("max_energy_drift") <= 1e-8);
  CHECK(m.metric("min_distance_ratio") >= 1.0 - 1e-9);
  CHECK(m.metric("frequency_rel_error") < 0.2);
  CHECK(m.to_json().find("\"checks\"") != std::string::npos);

  c.workers = 2;
  const auto r2 = run_experiment(c, false);
  CHECK(r2.manifest.to_json() == m.to_json());
}

TEST_CASE("single replica with no collisions gives a valid manifest") {
  const auto text = small_gas("1e-9", "1");
  const auto res = run_experiment(parse_config(text), false);
  CHECK(res.manifest.replicas.at(0).collisions == 0);
  CHECK(res.manifest.metric("collisions") == 0.0);
  CHECK(res.manifest.status == "ok");
}

TEST_CASE("written outputs are bit-identical on rerun") {
  const auto dir = scratch("rerun");
  auto text = small_gas() + "[output]\ndir = " + dir.string() + "\nformat = json\n";
  const auto c = parse_config(text);
  const auto first = run_experiment(c, true);
  std::map<std::string, std::string> files;
  for (const auto& f : first.manifest.outputs) files[f] = slurp(dir / f);
  CHECK(files.contains("replicas.json"));
  CHECK(files.contains("manifest.json"));
  CHECK(fs::exists(dir / "timings.json"));
  run_experiment(c, true);
  for (const auto& [f, body] : files) CHECK(slurp(dir / f) == body);
  fs::remove_all(dir);
}

TEST_CASE("invariant failure marks the run failed and dumps the state") {
  const auto dir = scratch("invariant");
  // drift tolerance below roundoff: conservation must be reported as broken
  auto text = small_gas() + "drift_tol = 1e-300\n[output]\ndir = " + dir.string() + "\n";
  const auto res = run_experiment(parse_config(text), true);
  CHECK(res.manifest.status == "invariant-failed");
  CHECK(res.manifest.failure.find("replica 0") != std::string::npos);
  REQUIRE_FALSE(res.manifest.replicas[0].dump.empty());
  CHECK(fs::exists(dir / res.manifest.replicas[0].dump));
  fs::remove_all(dir);
}

TEST_CASE("sweep records partial failures and continues") {
  const auto dir = scratch("sweep");
  auto text = small_gas("5") + "[output]\ndir = " + dir.string() + "\n";
  const auto c = parse_config(text);
  // eps = 1 breaks eps < side / 4
  const auto pts = sweep(c, "gas.eps", {"0.03125", "1", "0.0625"}, true);
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].ok);
  CHECK_FALSE(pts[1].ok);
  CHECK(pts[1].error.find("eps") != std::string::npos);
  CHECK(pts[2].ok);
  CHECK(pts[2].manifest.config.find("n = 256") != std::string::npos);
  const auto csv = slurp(dir / "sweep.csv");
  CHECK(csv.find("gas.eps,1,,,,,error") != std::string::npos);
  CHECK(fs::exists(dir / "gas.eps=0.0625" / "manifest.json"));

  // a single-point sweep reproduces the plain run
  const auto single = sweep(c, "ensemble.seed", {"42"}, false);
  const auto plain = run_experiment(c, false);
  CHECK(single[0].manifest.summary == plain.manifest.summary);
  fs::remove_all(dir);
}

TEST_CASE("maximum-principle check") {
  TorusGeometry g{2.0, 2};
  Rng rng(3);
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> u(0.0, 2.0);
  std::vector<ParticleState> ok, peaked;
  for (int i = 0; i < 20000; ++i) {
    ok.push_back({{u(rng), u(rng)}, {gauss(rng), gauss(rng)}});
    peaked.push_back({{0.5 * u(rng), 0.5 * u(rng)}, {std::abs(gauss(rng)) + 1.0, 0.0}});
  }
  CHECK(maximum_principle_check(ok, g, 1.0, 1.0).pass);
  CHECK_FALSE(maximum_principle_check(peaked, g, 1.0, 1.0).pass);
  // a larger sup bound tolerates proportionally more mass
  CHECK(maximum_principle_check(peaked, g, 1.0, 40.0).pass);
}

TEST_CASE("every experiment runs end to end at toy size") {
  const std::string gas = "[gas]\nside = 3\neps = 0.09\n";
  SUBCASE("msd") {
    const auto r = run_experiment(
        parse_config("[experiment]\nname = msd\n" + gas +
                     "[ensemble]\nreplicas = 2\n[analysis]\nduration_mft = 20\nfit_hi_mft = 20\n"),
        false);
    CHECK(r.manifest.status != "failed");
    CHECK(r.manifest.metric("kappa_msd") > 0.0);
  }
  SUBCASE("compare-levels") {
    const auto r = run_experiment(
        parse_config("[experiment]\nname = compare-levels\n" + gas +
                     "[analysis]\nduration_mft = 20\nfit_hi_mft = 20\njump_paths = 200\n"),
        false);
    CHECK(r.manifest.status != "failed");
    CHECK(r.manifest.metric("kappa_spectral") > 0.0);
    CHECK(r.tables.at(0).rows.size() == 21);
  }
  SUBCASE("kappa") {
    const auto r = run_experiment(
        parse_config("[experiment]\nname = kappa\n[analysis]\ngrid_div = 6\nkappa_paths = 10\n"
                     "kappa_duration_mft = 300\n"),
        false);
    CHECK(r.manifest.status != "failed");
    CHECK(r.manifest.metric("dense_vs_spectral") < 1e-8);
    CHECK(r.manifest.metric("kappa_relaxation") ==
          doctest::Approx(r.manifest.metric("relaxation_grid_closed_form")).epsilon(1e-9));
  }
  SUBCASE("trees") {
    const auto r = run_experiment(
        parse_config("[experiment]\nname = trees\n" + gas + "[ensemble]\nreplicas = 2\n"), false);
    CHECK(r.manifest.status != "failed");
    CHECK(r.manifest.metric("trees") == 200.0);
    CHECK(r.manifest.metric("mean_tree_size") > 1.0);
  }
  SUBCASE("lemma") {
    const auto r = run_experiment(
        parse_config("[experiment]\nname = lemma\n[analysis]\nlemma_samples = 2000\n"
                     "lemma_exponent_samples = 20000\n"),
        false);
    CHECK(r.manifest.status != "failed");
    CHECK(r.manifest.metric("test_points") == 27.0);
    CHECK(r.manifest.metric("fitted_C") > 0.0);
  }
  SUBCASE("heat") {
    const auto r = run_experiment(
        parse_config("[experiment]\nname = heat\n[gas]\nside = 4\neps = 0.0625\n"
                     "[ensemble]\nreplicas = 2\n"),
        false);
    CHECK(r.manifest.status != "failed");
    CHECK(r.manifest.metric("increments") > 0.0);
  }
}
