#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "hsdiff/error.hpp"
#include "hsdiff/linear_boltzmann.hpp"
#include "hsdiff/stats.hpp"

using namespace hsdiff;
using doctest::Approx;

namespace {

constexpr double kPi = std::numbers::pi;

// Composite Simpson rule on [a, b].
template <typename F>
double simpson(F f, double a, double b, int n = 4000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("jump rate at rest equals c_d times the mean speed") {
  // E|v1| in d=2 from the radial density r^2 exp(-r^2/2)
  const double mean2 = simpson([](double r) { return r * r * std::exp(-0.5 * r * r); }, 0, 14);
  CHECK(total_jump_rate({0, 0}, 1.0, 2) == Approx(2.0 * mean2).epsilon(1e-9));
  CHECK(total_jump_rate({0, 0}, 1.0, 2) == Approx(2.5066282746).epsilon(1e-9));
  const double mean3 = simpson(
      [](double r) { return 4 * kPi * r * r * r * std::exp(-0.5 * r * r) / std::pow(2 * kPi, 1.5); },
      0, 14);
  CHECK(total_jump_rate({0, 0, 0}, 1.0, 3) == Approx(kPi * mean3).epsilon(1e-9));
}

TEST_CASE("jump rate: large-speed asymptotics, isotropy, monotonicity") {
  for (int d : {2, 3}) {
    for (double beta : {1.0, 2.5}) {
      const double s = 20.0 / std::sqrt(beta);
      CHECK(total_jump_rate({s, 0, 0}, beta, d) / s == Approx(kernel_constant(d)).epsilon(0.01));
      const Vec diag = d == 2 ? Vec(s / std::sqrt(2.0), s / std::sqrt(2.0)) : Vec(s, s, s) / std::sqrt(3.0);
      CHECK(total_jump_rate(diag, beta, d) == Approx(total_jump_rate({s, 0, 0}, beta, d)));
      double prev = 0.0;
      for (int k = 0; k <= 60; ++k) {
        const double nu = total_jump_rate({0.2 * k, 0, 0}, beta, d);
        CHECK(nu > prev);
        prev = nu;
      }
    }
  }
  CHECK(total_jump_rate({600.0, 0}, 1.0, 2) == Approx(1200.0).epsilon(1e-3));
  CHECK_THROWS_AS(total_jump_rate({0, 0}, -1.0, 2), Error);
}

TEST_CASE("mean collision rate agrees with the speed-averaged jump rate") {
  for (int d : {2, 3}) {
    const double area = d == 2 ? 2 * kPi : 4 * kPi;
    const double avg = simpson(
        [&](double s) {
          return area * std::pow(s, d - 1) * std::pow(2 * kPi, -0.5 * d) * std::exp(-0.5 * s * s) *
                 total_jump_rate({s, 0, 0}, 1.0, d);
        },
        0, 12, 600);
    CHECK(mean_collision_rate(1.0, d) == Approx(avg).epsilon(1e-6));
    CHECK(equilibrium_collision_rate(1.0, d) == Approx(avg).epsilon(1e-8));
    CHECK(equilibrium_collision_rate(2.0, d) ==
          Approx(mean_collision_rate(2.0, d)).epsilon(1e-8));
  }
  CHECK(mean_collision_rate(1.0, 2) == Approx(2 * std::sqrt(kPi)));
  CHECK(mean_collision_rate(1.0, 3) == Approx(4 * std::sqrt(kPi)));
}

TEST_CASE("post-collision law: relaxation and isotropy") {
  Rng rng(1);
  for (int d : {2, 3}) {
    const Vec fast{5.0, 0, 0};
    double e = 0.0;
    for (int k = 0; k < 20000; ++k) e += norm2(sample_post_collision(fast, 1.0, d, rng));
    CHECK(e / 20000 < 25.0);
  }
  std::vector<double> angle;
  for (int k = 0; k < 20000; ++k) {
    const Vec w = sample_post_collision({0, 0}, 1.0, 2, rng);
    angle.push_back(std::atan2(w[1], w[0]));
  }
  CHECK(stats::ks_test(angle, [](double a) { return (a + kPi) / (2 * kPi); }).p_value > 0.01);
}

TEST_CASE("jump process") {
  const TorusGeometry g{10.0, 2};
  SUBCASE("zero rate is free flight") {
    Rng rng(3);
    auto tr = simulate_jump_process({1, 2}, {0.3, -0.7}, 50.0, g, rng, {.beta = 1.0, .rate_scale = 0.0});
    CHECK(tr.events.empty());
    CHECK(tr.position_at(50.0)[0] == Approx(1 + 0.3 * 50));
    CHECK(tr.position_at(50.0)[1] == Approx(2 - 0.7 * 50));
  }
  SUBCASE("jump count matches the mean rate") {
    Rng rng(4);
    std::size_t jumps = 0;
    double total = 0.0;
    for (int r = 0; r < 20; ++r) {
      Vec v0{std::normal_distribution<double>(0, 1)(rng), std::normal_distribution<double>(0, 1)(rng)};
      auto t2 = simulate_jump_process({0, 0}, v0, 1000.0, g, rng);
      jumps += t2.events.size();
      total += 1000.0;
    }
    CHECK(jumps / total == Approx(mean_collision_rate(1.0, 2)).epsilon(0.03));
  }
  SUBCASE("path is continuous and piecewise linear") {
    Rng rng(5);
    auto tr = simulate_jump_process({0, 0}, {1, 0}, 20.0, g, rng);
    REQUIRE(tr.events.size() > 10);
    Vec x{0, 0}, v{1, 0};
    double t = 0.0;
    for (const auto& e : tr.events) {
      const Vec expect = x + (e.time - t) * v;
      CHECK(norm(expect - e.position) < 1e-12);
      CHECK(norm(v - e.v_pre) == 0.0);
      x = e.position;
      v = e.v_post;
      t = e.time;
    }
  }
}

TEST_CASE("Maxwellian is stationary for the jump process") {
  Rng rng(6);
  const TorusGeometry g{10.0, 2};
  auto tr = simulate_jump_process({0, 0}, {3.0, 0}, 60000.0, g, rng);
  REQUIRE(tr.events.size() > 100000);
  std::vector<double> vx, vy;
  for (double t = 50.0; t < 60000.0; t += 3.0) {
    const Vec v = tr.velocity_at(t);
    vx.push_back(v[0]);
    vy.push_back(v[1]);
  }
  CHECK(stats::ks_test(vx, stats::normal_cdf).p_value > 0.01);
  CHECK(stats::ks_test(vy, stats::normal_cdf).p_value > 0.01);
}

TEST_CASE("velocity grid") {
  const auto g = make_velocity_grid(2, 1.0);
  CHECK(g.per_axis == 25);
  CHECK(g.h == Approx(0.5));
  double total = 0.0;
  for (double m : g.mass) total += m;
  CHECK(total == Approx(1.0).epsilon(1e-12));
  // symmetric under v -> -v
  for (std::size_t i = 0; i < g.size(); ++i) {
    const std::size_t j = g.size() - 1 - i;
    CHECK(norm(g.nodes[i] + g.nodes[j]) < 1e-12);
    CHECK(g.mass[i] == Approx(g.mass[j]));
  }
  const auto g3 = make_velocity_grid(3, 2.0);
  CHECK(g3.per_axis == 17);
  CHECK(g3.v_max == Approx(6.0 / std::sqrt(2.0)));
}

TEST_CASE("angular rules integrate the kernel") {
  for (int d : {2, 3}) {
    const auto r = angular_rule(d, d == 2 ? 48 : 6);
    double area = 0.0, half = 0.0;
    const Vec u = d == 2 ? Vec(0.6, 0.8) : Vec(0.36, 0.48, 0.8);
    for (std::size_t q = 0; q < r.weights.size(); ++q) {
      area += r.weights[q];
      half += r.weights[q] * std::max(0.0, dot(u, r.directions[q]));
    }
    CHECK(area == Approx(d == 2 ? 2 * kPi : 4 * kPi).epsilon(1e-12));
    CHECK(half == Approx(kernel_constant(d)).epsilon(d == 2 ? 1e-3 : 2e-2));
  }
}

TEST_CASE("assembled operator: conservation, symmetry, dissipation") {
  const auto grid = make_velocity_grid(2, 1.0);
  const auto op = assemble_L(grid);
  const auto n = static_cast<Eigen::Index>(grid.size());
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  CHECK((op.matrix * ones).cwiseAbs().maxCoeff() <= 1e-10);

  Eigen::VectorXd m(n);
  for (Eigen::Index i = 0; i < n; ++i) m[i] = grid.mass[i];
  const Eigen::MatrixXd wl = m.asDiagonal() * op.matrix;
  CHECK((wl - wl.transpose()).norm() / wl.norm() <= 1e-8);

  Rng rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd phi(n);
    for (auto& x : phi) x = g(rng);
    CHECK(phi.dot(m.asDiagonal() * (op.matrix * phi)) <= 1e-14);
  }

  // reflections v -> -v and v_x -> -v_x commute with L
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n), px = Eigen::MatrixXd::Zero(n, n);
  const int na = grid.per_axis;
  for (int a = 0; a < na; ++a)
    for (int b = 0; b < na; ++b) {
      p(grid.index({a, b, 0}), grid.index({na - 1 - a, na - 1 - b, 0})) = 1.0;
      px(grid.index({a, b, 0}), grid.index({na - 1 - a, b, 0})) = 1.0;
    }
  CHECK((p * op.matrix - op.matrix * p).cwiseAbs().maxCoeff() <= 1e-10 * op.matrix.cwiseAbs().maxCoeff());
  CHECK((px * op.matrix - op.matrix * px).cwiseAbs().maxCoeff() <= 1e-10 * op.matrix.cwiseAbs().maxCoeff());
  CHECK(op.truncation < 1e-3);
}

TEST_CASE("loss rate converges to the jump rate as the grid is refined") {
  const double exact = total_jump_rate({0, 0}, 1.0, 2);
  std::vector<double> err;
  for (double div : {3.0, 6.0, 12.0}) {
    const auto grid = make_velocity_grid(2, 1.0, 6.0 / div);
    const auto op = assemble_L(grid, 96);
    const auto mid = grid.index({grid.per_axis / 2, grid.per_axis / 2, 0});
    err.push_back(std::abs(op.loss_rate[mid] - exact));
  }
  CHECK(err[1] < err[0]);
  CHECK(err[2] < err[1]);
  CHECK(std::log2(err[0] / err[2]) / 2.0 >= 1.0);
}

TEST_CASE("three-dimensional operator") {
  const auto grid = make_velocity_grid(3, 1.0, 1.5);
  const auto op = assemble_L(grid, 3);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(grid.size());
  CHECK((op.matrix * ones).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("undersized grid is rejected") {
  const auto grid = make_velocity_grid(2, 1.0, 0.25, 1.5);
  CHECK_THROWS_WITH_AS(assemble_L(grid, 16), "grid too small", Error);
}

TEST_CASE("operator binary round trip") {
  const auto grid = make_velocity_grid(2, 1.5, 0.0);
  const auto op = relaxation_operator(grid, 2.0);
  std::stringstream ss;
  write_operator(ss, op);
  CHECK(ss.str().size() == 8 * (4 + grid.size() * grid.size()));
  const auto back = read_operator(ss);
  CHECK(back.grid.size() == grid.size());
  CHECK(back.grid.beta == 1.5);
  CHECK((back.matrix - op.matrix).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("relative entropy of Maxwellian and shifted ensembles") {
  Rng rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec> eq(100000), shifted(100000);
  for (auto& v : eq) v = {g(rng), g(rng)};
  const Vec u{1.0, 0.5};
  for (auto& v : shifted) v = Vec(g(rng), g(rng)) + u;
  const auto r0 = relative_entropy_monitor(eq, 1.0, 2);
  CHECK(r0.value >= 0.0);
  CHECK(r0.value < 0.005);
  const auto r1 = relative_entropy_monitor(shifted, 1.0, 2);
  CHECK(r1.value == Approx(0.5 * norm2(u)).epsilon(0.1));
  std::vector<Vec> small(100);
  CHECK_THROWS_AS(relative_entropy_monitor(small, 1.0, 2), ContractViolation);
}
