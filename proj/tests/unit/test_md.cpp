#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "hsdiff/equilibrium.hpp"
#include "hsdiff/error.hpp"
#include "hsdiff/md.hpp"
#include "hsdiff/stats.hpp"

using namespace hsdiff;
using doctest::Approx;

namespace {

GasParameters gas(std::size_t n, double eps, double side, int dim = 2) {
  GasParameters p;
  p.n = n;
  p.eps = eps;
  p.geom = {side, dim};
  return p;
}

Configuration two(Vec x1, Vec v1, Vec x2, Vec v2) {
  Configuration c;
  c.states = {{x1, v1}, {x2, v2}};
  return c;
}

// Boltzmann-Grad gas with N eps / side^2 = 1: 100 particles, side 3.
GasParameters bg100() { return gas(100, 0.09, 3.0); }

// Earliest contact over all pairs and images, recomputed from scratch.
std::optional<double> oracle_next_collision(const Simulation& sim, double horizon) {
  const auto conf = sim.configuration();
  std::optional<double> best;
  for (std::size_t i = 0; i < conf.states.size(); ++i)
    for (std::size_t j = i + 1; j < conf.states.size(); ++j) {
      const auto t = predict_pair_collision(conf.states[i], conf.states[j], sim.params().eps,
                                            sim.params().geom, horizon);
      if (t && (!best || *t < *best)) best = t;
    }
  if (best) *best += sim.clock();
  return best;
}

}  // namespace

TEST_CASE("head-on pair: one scheduled collision at the analytic time") {
  // the two spheres sit in adjacent cells, so the pair is predicted at init
  const auto p = gas(2, 0.1, 1.0);
  Simulation sim(two({0.25, 0.5}, {1, 0}, {0.55, 0.5}, {-1, 0}), p);
  const auto pairs = sim.scheduled_pairs();
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].time == Approx(0.1));
  CHECK(pairs[0].i == 0);
  CHECK(pairs[0].j == 1);

  sim.run_until(0.3);
  REQUIRE(sim.collision_count() == 1);
  CHECK(sim.particle(0).velocity[0] == Approx(-1.0));
  CHECK(sim.particle(1).velocity[0] == Approx(1.0));
  CHECK(norm(sim.total_momentum()) == 0.0);
  const auto& rec = sim.log().at(0);
  CHECK(rec.time == Approx(0.1));
  CHECK(rec.omega[0] == Approx(1.0));
}

TEST_CASE("all velocities zero: nothing is scheduled") {
  Configuration c;
  const auto p = gas(50, 0.02, 2.0);
  Rng rng(1);
  for (const auto& x : sample_positions(p, rng)) c.states.push_back({x, {}});
  Simulation sim(c, p);
  CHECK(sim.scheduled_pairs().empty());
  sim.run_until(5.0);
  CHECK(sim.collision_count() == 0);
  CHECK(collision_frequency(sim) == 0.0);
}

TEST_CASE("initial pair events match a from-scratch prediction") {
  const auto p = bg100();
  Rng rng(31);
  Simulation sim(sample_equilibrium(p, rng), p);
  const auto conf = sim.configuration();
  const auto pairs = sim.scheduled_pairs();
  REQUIRE(pairs.size() > 10);
  for (const auto& e : pairs) {
    const auto t = predict_pair_collision(conf.states[e.i], conf.states[e.j], p.eps, p.geom,
                                          e.time + 1.0);
    REQUIRE(t);
    CHECK(*t == Approx(e.time).epsilon(1e-9));
  }
  // no pair collides before the queue's first collision
  const auto first = sim.next_collision_time();
  const auto oracle = oracle_next_collision(sim, *first + 1.0);
  CHECK(*oracle == Approx(*first).epsilon(1e-9));
}

TEST_CASE("queue soundness at random checkpoints") {
  const auto p = bg100();
  Rng rng(32);
  Simulation sim(sample_equilibrium(p, rng), p);
  std::uniform_real_distribution<double> step(0.0, 0.5);
  for (int k = 0; k < 40; ++k) {
    sim.run_until(sim.clock() + step(rng));
    const auto q = sim.next_collision_time();
    const auto o = oracle_next_collision(sim, 5.0);
    if (!o) continue;
    REQUIRE(q);
    // the queue may lack pairs that are not yet cell neighbours, but never
    // misses an earlier collision
    CHECK(*q <= *o + 1e-9);
    CHECK(*q >= *o - 1e-9);
  }
}

TEST_CASE("head-on symmetric pair exchanges velocities") {
  const auto p = gas(2, 0.1, 1.0);
  Simulation sim(two({0.2, 0.5}, {0.5, 0}, {0.5, 0.5}, {-0.5, 0}), p);
  sim.run_until(0.25);
  CHECK(sim.collision_count() == 1);
  CHECK(sim.particle(0).velocity[0] == Approx(-0.5));
  CHECK(sim.particle(1).velocity[0] == Approx(0.5));
  CHECK(sim.total_momentum()[0] == 0.0);
}

TEST_CASE("single particle: free flight with exact unwrapped displacement") {
  Configuration c;
  c.states = {{{0.3, 0.7}, {2.3, -1.7}}};
  auto p = gas(1, 0.1, 1.0);
  Simulation sim(c, p);
  sim.run_until(7.5);
  const Vec u = sim.unwrapped_position(0);
  CHECK(u[0] - 0.3 == Approx(2.3 * 7.5).epsilon(1e-13));
  CHECK(u[1] - 0.7 == Approx(-1.7 * 7.5).epsilon(1e-13));
  const auto z = sim.particle(0);
  CHECK(z.position[0] == Approx(std::fmod(0.3 + 2.3 * 7.5, 1.0)));
  CHECK(sim.event_count() > 20);
}

TEST_CASE("run_until composition is bit-identical") {
  const auto p = bg100();
  Rng rng(33);
  const auto init = sample_equilibrium(p, rng);
  const double mft = 1.0 / (2.0 * std::sqrt(std::numbers::pi));
  Simulation a(init, p), b(init, p);
  a.run_until(50 * mft);
  for (int k = 1; k <= 17; ++k) b.run_until(50 * mft * k / 17.0);
  REQUIRE(a.collision_count() > 1000);
  CHECK(a.collision_count() == b.collision_count());
  bool same = true;
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto za = a.particle(i), zb = b.particle(i);
    same = same && za.position == zb.position && za.velocity == zb.velocity &&
           a.unwrapped_position(i) == b.unwrapped_position(i);
  }
  CHECK(same);
}

TEST_CASE("collision frequency") {
  const auto p = gas(2, 0.1, 2.0);
  Simulation sim(two({0.5, 1.0}, {0.1, 0}, {1.5, 1.0}, {-0.1, 0}), p);
  CHECK_THROWS_AS(collision_frequency(sim), ContractViolation);
  sim.run_until(10.0);
  REQUIRE(sim.collision_count() == 1);
  CHECK(collision_frequency(sim) == Approx(0.1));
}

TEST_CASE("conservation") {
  const auto p = bg100();
  Rng rng(34);
  Simulation sim(sample_equilibrium(p, rng), p);
  auto r = conservation_report(sim);
  CHECK(r.momentum_drift == 0.0);
  CHECK(r.energy_drift == 0.0);
  sim.run_collisions(1);
  r = conservation_report(sim);
  CHECK(r.momentum_drift <= 1e-12);
  CHECK(r.energy_drift <= 1e-12);
  sim.run_collisions(100000);
  r = conservation_report(sim);
  CHECK(r.momentum_drift <= 1e-8);
  CHECK(r.energy_drift <= 1e-8);
}

TEST_CASE("collision log entries follow the scattering rule in time order") {
  const auto p = bg100();
  Rng rng(35);
  Simulation sim(sample_equilibrium(p, rng), p);
  sim.run_collisions(2000);
  const auto& log = sim.log();
  REQUIRE(log.size() == 2000);
  for (std::size_t k = 0; k < log.size(); ++k) {
    const auto& e = log[k];
    if (k) CHECK(e.time > log[k - 1].time);
    const auto [a, b] = apply_elastic_collision(e.vi_pre, e.vj_pre, e.omega);
    CHECK(norm(a - e.vi_post) <= 1e-14 * (1 + norm(a)));
    CHECK(norm(b - e.vj_post) <= 1e-14 * (1 + norm(b)));
  }
}

TEST_CASE("no overlap at event and sample times") {
  const auto p = bg100();
  Rng rng(36);
  Simulation sim(sample_equilibrium(p, rng), p);
  std::uniform_real_distribution<double> step(0.0, 0.05);
  double worst = INFINITY;
  for (int k = 0; k < 1000; ++k) {
    sim.run_until(sim.clock() + step(rng));
    worst = std::min(worst, sim.min_pair_distance());
  }
  for (int k = 0; k < 200; ++k) {
    sim.run_collisions(1);
    worst = std::min(worst, sim.min_pair_distance());
  }
  CHECK(worst >= p.eps * (1 - 1e-9));
}

TEST_CASE("time reversal returns to the initial configuration") {
  auto p = gas(400, 0.05, 4.5);  // N eps / side^2 ~ 1
  Rng rng(37);
  const auto init = sample_equilibrium(p, rng);
  Simulation sim(init, p);
  sim.run_collisions(500);
  const double t = sim.clock();
  sim.reverse_velocities();
  sim.run_until(2 * t);
  double err = 0.0;
  for (std::size_t i = 0; i < p.n; ++i) {
    err = std::max(err, torus_distance(sim.particle(i).position, init.states[i].position, p.geom));
    CHECK(norm(sim.particle(i).velocity + init.states[i].velocity) <= 1e-6);
  }
  CHECK(err / p.geom.side <= 1e-6);
}

TEST_CASE("tagged trajectory") {
  SUBCASE("free flight is a straight line") {
    const auto p = gas(2, 0.1, 3.0);
    Simulation sim(two({0.5, 0.5}, {1.1, 0.4}, {2.0, 2.0}, {1.1, 0.4}), p);
    for (int k = 1; k <= 10; ++k) sim.run_until(k * 0.7);
    for (const auto& s : tagged_trajectory(sim)) {
      CHECK(s.position[0] == Approx(0.5 + 1.1 * s.time));
      CHECK(s.position[1] == Approx(0.5 + 0.4 * s.time));
    }
  }
  SUBCASE("unwrapped path reduces to the in-box position") {
    const auto p = bg100();
    Rng rng(38);
    Simulation sim(sample_equilibrium(p, rng), p);
    for (int k = 1; k <= 50; ++k) {
      sim.run_until(0.2 * k);
      const auto& s = sim.tagged_samples().back();
      const Vec box = sim.particle(0).position;
      CHECK(torus_distance(reduce(s.position, p.geom), box, p.geom) < 1e-12);
    }
    const auto path = tagged_trajectory(sim);
    for (std::size_t k = 1; k < path.size(); ++k) {
      CHECK(path[k].time >= path[k - 1].time);
      // continuity: consecutive samples differ by free flight
      const double dt = path[k].time - path[k - 1].time;
      CHECK(norm(path[k].position - path[k - 1].position) <= norm(path[k - 1].velocity) * dt + 1e-9);
    }
  }
}

TEST_CASE("ballistic mean squared displacement at short times") {
  const auto p = bg100();
  const double mft = 1.0 / (2.0 * std::sqrt(std::numbers::pi));
  const double t = 0.02 * mft;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t r = 0; r < 40; ++r) {
    Rng rng = make_rng(100, r);
    Simulation sim(sample_equilibrium(p, rng), p);
    std::vector<Vec> x0;
    for (std::size_t i = 0; i < p.n; ++i) x0.push_back(sim.unwrapped_position(i));
    sim.run_until(t);
    for (std::size_t i = 0; i < p.n; ++i) {
      sum += norm2(sim.unwrapped_position(i) - x0[i]);
      ++count;
    }
  }
  CHECK(sum / count == Approx(2.0 * t * t).epsilon(0.05));
}

TEST_CASE("velocities stay Maxwellian") {
  const auto p = bg100();
  std::vector<double> vx;
  for (std::uint64_t r = 0; r < 20; ++r) {
    Rng rng = make_rng(200, r);
    Simulation sim(sample_equilibrium(p, rng), p, {.record_log = false});
    sim.run_until(20.0);
    for (std::size_t i = 0; i < p.n; ++i) vx.push_back(sim.particle(i).velocity[0]);
  }
  CHECK(stats::ks_test(vx, stats::normal_cdf).p_value > 0.01);
}

TEST_CASE("three-dimensional gas runs and conserves") {
  auto p = gas(200, 0.2, 3.0, 3);  // N eps^2 / side^3 ~ 0.3
  Rng rng(39);
  Simulation sim(sample_equilibrium(p, rng), p);
  sim.run_collisions(5000);
  const auto r = conservation_report(sim);
  CHECK(r.energy_drift < 1e-10);
  CHECK(sim.min_pair_distance() >= p.eps * (1 - 1e-9));
  const auto o = oracle_next_collision(sim, 5.0);
  CHECK(*sim.next_collision_time() == Approx(*o).epsilon(1e-9));
}

TEST_CASE("init rejects overlapping input") {
  const auto p = gas(2, 0.1, 1.0);
  CHECK_THROWS_WITH_AS(Simulation(two({0.5, 0.5}, {}, {0.55, 0.5}, {}), p), "exclusion violated",
                       Error);
}

TEST_CASE("log and trajectory writers") {
  const auto p = gas(2, 0.1, 2.0);
  Simulation sim(two({0.5, 1.0}, {1, 0}, {1.5, 1.0}, {-1, 0}), p);
  sim.run_until(1.0);
  std::ostringstream bin;
  write_collision_log(bin, sim.log(), 2, LogFormat::binary);
  const std::string s = bin.str();
  REQUIRE(s.size() == 8 * (3 + 5 * 2));
  double t;
  std::memcpy(&t, s.data(), 8);
  CHECK(t == Approx(0.45));
  double j;
  std::memcpy(&j, s.data() + 16, 8);
  CHECK(j == 1.0);

  std::ostringstream txt;
  write_collision_log(txt, sim.log(), 2, LogFormat::text);
  CHECK(txt.str().rfind("0.44999999999999", 0) == 0);

  std::ostringstream csv;
  write_trajectory_csv(csv, tagged_trajectory(sim), 2);
  CHECK(csv.str().rfind("t,x1,x2,v1,v2\n0,0.5,1,1,0\n", 0) == 0);
}
