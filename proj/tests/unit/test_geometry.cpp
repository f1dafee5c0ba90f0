#include <cmath>
#include <random>
#include <tuple>

#include "doctest.h"
#include "hsdiff/error.hpp"
#include "hsdiff/geometry.hpp"
#include "hsdiff/rng.hpp"

using namespace hsdiff;
using doctest::Approx;

namespace {

TorusGeometry torus(double side, int dim = 2) { return {side, dim}; }

// Shortest displacement among the 3^d neighbouring images.
Vec brute_minimal_image(const Vec& x, const Vec& y, const TorusGeometry& g) {
  Vec best;
  double best_r = INFINITY;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int c = (g.dim == 3 ? -1 : 0); c <= (g.dim == 3 ? 1 : 0); ++c) {
        const Vec d = x - y + Vec(a, b, c) * g.side;
        if (norm(d) < best_r) {
          best_r = norm(d);
          best = d;
        }
      }
  return best;
}

// Small-step integration of the relative motion; returns the first step at
// which some image is within eps.
std::optional<double> stepped_contact(const ParticleState& z1, const ParticleState& z2,
                                      double eps, const TorusGeometry& g, double horizon) {
  const Vec dv = z2.velocity - z1.velocity;
  const double speed = norm(dv);
  if (speed == 0.0) return std::nullopt;
  const double dt = 1e-4 * eps / speed;
  const Vec base = minimal_image(z2.position, z1.position, g);
  for (double t = 0.0; t <= horizon; t += dt) {
    const Vec rel = reduce(base + t * dv + Vec(g.side, g.side, g.dim == 3 ? g.side : 0) * 0.5, g);
    Vec d = rel - Vec(g.side, g.side, g.dim == 3 ? g.side : 0) * 0.5;
    if (norm(d) <= eps) return t;
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("minimal image examples") {
  auto d = minimal_image({0.9, 0}, {0.1, 0}, torus(1));
  CHECK(d[0] == Approx(-0.2));
  CHECK(d[1] == 0.0);
  d = minimal_image({0.3, 0.7}, {0.3, 0.7}, torus(1));
  CHECK(norm(d) == 0.0);
  d = minimal_image({1.5, 0.5}, {0.1, 1.9}, torus(2));
  const auto o = brute_minimal_image({1.5, 0.5}, {0.1, 1.9}, torus(2));
  CHECK(d[0] == Approx(o[0]));
  CHECK(d[1] == Approx(o[1]));
  CHECK(d[0] == Approx(-0.6));
  CHECK(d[1] == Approx(0.6));
}

TEST_CASE("minimal image rejects components beyond the dimension") {
  CHECK_THROWS_AS(minimal_image({0.1, 0.1, 0.2}, {0, 0}, torus(1)), ContractViolation);
}

TEST_CASE("minimal image: antisymmetry and agreement with image enumeration") {
  Rng rng(7);
  for (int dim : {2, 3}) {
    const auto g = torus(2.5, dim);
    std::uniform_real_distribution<double> u(0.0, g.side);
    for (int n = 0; n < 1000; ++n) {
      Vec x, y;
      for (int k = 0; k < dim; ++k) {
        x[k] = u(rng);
        y[k] = u(rng);
      }
      const Vec d = minimal_image(x, y, g);
      const Vec e = minimal_image(y, x, g);
      const Vec o = brute_minimal_image(x, y, g);
      for (int k = 0; k < dim; ++k) {
        CHECK(d[k] >= -g.side / 2);
        CHECK(d[k] < g.side / 2);
        CHECK(d[k] == Approx(-e[k]));
      }
      CHECK(norm(d) == Approx(norm(o)));
    }
  }
}

TEST_CASE("pair prediction examples") {
  const auto g = torus(1);
  auto t = predict_pair_collision({{0, 0}, {1, 0}}, {{0.5, 0}, {0, 0}}, 0.1, g, 10.0);
  REQUIRE(t);
  CHECK(*t == Approx(0.4));
  // receding directly, hits the periodic image of the partner
  t = predict_pair_collision({{0, 0}, {-1, 0}}, {{0.2, 0}, {0, 0}}, 0.1, g, 10.0);
  REQUIRE(t);
  CHECK(*t == Approx(0.7));
  const auto s = stepped_contact({{0, 0}, {-1, 0}}, {{0.2, 0}, {0, 0}}, 0.1, g, 2.0);
  REQUIRE(s);
  CHECK(*s == Approx(0.7).epsilon(1e-4));
  CHECK_FALSE(predict_pair_collision({{0, 0}, {1, 1}}, {{0.5, 0}, {1, 1}}, 0.1, g, 10.0));
}

TEST_CASE("pair prediction rejects overlap and bad horizon") {
  const auto g = torus(1);
  CHECK_THROWS_WITH_AS(predict_pair_collision({{0, 0}, {1, 0}}, {{0.05, 0}, {0, 0}}, 0.1, g, 1.0),
                       "exclusion violated", Error);
  CHECK_THROWS_AS(predict_pair_collision({{0, 0}, {1, 0}}, {{0.5, 0}, {0, 0}}, 0.1, g, 0.0),
                  ContractViolation);
}

TEST_CASE("pair prediction agrees with a small-step integrator") {
  Rng rng(11);
  const auto g = torus(1);
  const double eps = 0.1;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nv(0.0, 1.0);
  int hits = 0;
  for (int n = 0; n < 1000; ++n) {
    ParticleState a{{u(rng), u(rng)}, {nv(rng), nv(rng)}};
    ParticleState b{{u(rng), u(rng)}, {nv(rng), nv(rng)}};
    if (torus_distance(a.position, b.position, g) <= eps * 1.01) continue;
    const double horizon = 0.5;
    const auto t = predict_pair_collision(a, b, eps, g, horizon);
    const auto s = stepped_contact(a, b, eps, g, horizon);
    REQUIRE(t.has_value() == s.has_value());
    if (t) {
      ++hits;
      const double dt = 1e-4 * eps / norm(b.velocity - a.velocity);
      CHECK(std::abs(*t - *s) <= dt * 1.0001);
      // approaching at contact
      const Vec x1 = a.position + *t * a.velocity;
      const Vec x2 = b.position + *t * b.velocity;
      const Vec d = minimal_image(x2, x1, g);
      CHECK(norm(d) == Approx(eps).epsilon(1e-9));
      CHECK(dot(d, b.velocity - a.velocity) <= 0.0);
    }
  }
  CHECK(hits > 50);
}

TEST_CASE("pair prediction scans far images for long horizons") {
  // Relative motion along x wraps several times before meeting the partner
  // offset in y.
  const auto g = torus(1);
  ParticleState a{{0.0, 0.0}, {1.0, 0.101}};
  ParticleState b{{0.5, 0.5}, {0.0, 0.0}};
  const auto t = predict_pair_collision(a, b, 0.05, g, 20.0);
  const auto s = stepped_contact(a, b, 0.05, g, 20.0);
  REQUIRE(t);
  REQUIRE(s);
  CHECK(*t == Approx(*s).epsilon(1e-4));
  CHECK(*t > 1.0);
}

TEST_CASE("contact deflection") {
  const auto g = torus(1);
  auto w = contact_deflection({0, 0}, {0.1, 0}, g, 0.1);
  CHECK(w[0] == Approx(1.0));
  w = contact_deflection({0.95, 0}, {0.05, 0}, g, 0.1);
  CHECK(w[0] == Approx(1.0));
  CHECK(w[1] == Approx(0.0));
  const double r = 0.1 / std::sqrt(2.0);
  w = contact_deflection({0, 0}, {r, r}, g, 0.1);
  CHECK(w[0] == Approx(std::sqrt(2.0) / 2));
  CHECK(w[1] == Approx(std::sqrt(2.0) / 2));
  CHECK_THROWS_AS(contact_deflection({0, 0}, {0.2, 0}, g, 0.1), Error);
}

TEST_CASE("elastic collision examples") {
  auto [a, b] = apply_elastic_collision({1, 0}, {-1, 0}, {1, 0});
  CHECK(a[0] == -1.0);
  CHECK(b[0] == 1.0);
  std::tie(a, b) = apply_elastic_collision({1, 0}, {0, 0}, {0, 1});
  CHECK(a == Vec(1, 0));
  CHECK(b == Vec(0, 0));
  const double h = std::sqrt(2.0) / 2;
  std::tie(a, b) = apply_elastic_collision({1, 0}, {0, 0}, {h, h});
  CHECK(a[0] == Approx(0.5));
  CHECK(a[1] == Approx(-0.5));
  CHECK(b[0] == Approx(0.5));
  CHECK(b[1] == Approx(0.5));
  CHECK(norm2(a) + norm2(b) == Approx(1.0));
  CHECK_THROWS_AS(apply_elastic_collision({1, 0}, {0, 0}, {1, 1}), ContractViolation);
}

TEST_CASE("elastic collision: involution and conservation") {
  Rng rng(3);
  std::normal_distribution<double> nv(0.0, 1.0);
  for (int n = 0; n < 1000; ++n) {
    Vec v{nv(rng), nv(rng), nv(rng)}, v1{nv(rng), nv(rng), nv(rng)};
    Vec w{nv(rng), nv(rng), nv(rng)};
    w = w / norm(w);
    const auto [p, q] = apply_elastic_collision(v, v1, w);
    const Vec ds = p + q - v - v1;
    CHECK(norm(ds) <= 1e-12 * (norm(v) + norm(v1)));
    const double e0 = norm2(v) + norm2(v1);
    CHECK(std::abs(norm2(p) + norm2(q) - e0) <= 1e-12 * e0);
    const auto [r, s] = apply_elastic_collision(p, q, w);
    CHECK(norm(r - v) <= 1e-12 * (1 + norm(v)));
    CHECK(norm(s - v1) <= 1e-12 * (1 + norm(v1)));
  }
}
