#include "hsdiff/trees.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <random>
#include <unordered_map>

#include "hsdiff/error.hpp"
#include "hsdiff/parallel.hpp"

namespace hsdiff {

bool CollisionTree::contains(std::uint32_t id) const {
  return std::any_of(nodes.begin(), nodes.end(), [id](const TreeNode& n) { return n.id == id; });
}

int CollisionTree::depth() const {
  int d = 0;
  for (const auto& n : nodes) d = std::max(d, n.depth);
  return d;
}

CollisionTree build_backward_tree(std::span<const CollisionRecord> log, std::uint32_t tagged,
                                  double t, double window, LogCoverage coverage) {
  require(window >= 0.0, "window must be nonnegative");
  const double slack = 1e-12 * std::max(1.0, std::abs(t));
  if (t - window < coverage.start - slack || t > coverage.end + slack) {
    throw Error("window exceeds log coverage");
  }
  CollisionTree tree;
  tree.root = tagged;
  tree.t = t;
  tree.window = window;
  tree.nodes.push_back({tagged, t, -1, 0});

  std::unordered_map<std::uint32_t, int> member{{tagged, 0}};
  const double t0 = t - window;
  auto end = std::upper_bound(log.begin(), log.end(), t,
                              [](double s, const CollisionRecord& r) { return s < r.time; });
  for (auto it = end; it != log.begin();) {
    --it;
    if (it->time < t0) break;
    const auto fi = member.find(it->i);
    const auto fj = member.find(it->j);
    const bool in_i = fi != member.end();
    const bool in_j = fj != member.end();
    if (in_i && in_j) {
      tree.internal.push_back({it->time, it->i, it->j});
    } else if (in_i || in_j) {
      const int parent = in_i ? fi->second : fj->second;
      const std::uint32_t child = in_i ? it->j : it->i;
      const Vec omega = in_i ? it->omega : -it->omega;
      const int idx = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({child, it->time, parent, tree.nodes[parent].depth + 1});
      tree.edges.push_back({it->time, tree.nodes[parent].id, child, omega});
      member.emplace(child, idx);
    }
  }
  return tree;
}

std::vector<RecollisionRecord> detect_recollisions(const CollisionTree& tree) {
  using Key = std::pair<std::uint32_t, std::uint32_t>;
  auto key = [](std::uint32_t a, std::uint32_t b) { return Key{std::min(a, b), std::max(a, b)}; };
  std::map<Key, std::vector<double>> pairs;
  for (const auto& c : tree.internal) pairs[key(c.i, c.j)].push_back(c.time);
  for (const auto& e : tree.edges) {
    auto it = pairs.find(key(e.parent, e.child));
    if (it != pairs.end()) it->second.push_back(e.time);
  }
  std::vector<RecollisionRecord> out;
  out.reserve(pairs.size());
  for (auto& [k, times] : pairs) {
    std::sort(times.begin(), times.end());
    out.push_back({k.first, k.second, std::move(times)});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.times.back() != b.times.back()) return a.times.back() > b.times.back();
    return std::pair(a.i, a.j) < std::pair(b.i, b.j);
  });
  return out;
}

BranchingProfile branching_profile(const CollisionTree& tree, double tau) {
  require(tau > 0.0, "slice width must be positive");
  BranchingProfile p;
  p.tau = tau;
  const auto slices = static_cast<std::size_t>(std::max(1.0, std::ceil(tree.window / tau - 1e-12)));
  p.counts.assign(slices, 0);
  for (const auto& e : tree.edges) {
    const double back = tree.t - e.time;
    auto k = static_cast<std::size_t>(std::floor(back / tau));
    // an adjunction exactly at t - window belongs to the last slice
    k = std::min(k, slices - 1);
    ++p.counts[k];
  }
  return p;
}

bool admissible(const BranchingProfile& profile, double a) {
  double cap = 1.0;
  for (int n : profile.counts) {
    cap *= a;
    if (!(n < cap)) return false;
  }
  return true;
}

void LemmaParameters::validate() const {
  geom.validate();
  require(E > 0.0, "E must be positive");
  require(eps > 0.0 && eps < eps0, "need 0 < eps < eps0");
  require(eps0 < geom.side, "need eps0 < side");
  require(delta > 0.0, "delta must be positive");
  require(t > 0.0, "t must be positive");
  require(C > 0.0, "C must be positive");
}

double lemma_bound(const LemmaParameters& p) {
  require(p.E > 0.0 && p.eps0 > 0.0 && p.delta > 0.0, "E, eps0, delta must be positive");
  require(p.eps >= 0.0 && p.t >= 0.0, "eps and t must be nonnegative");
  const int d = p.geom.dim;
  const double lam = p.geom.side;
  const double m = d - 1;
  return p.C * std::pow(p.E, d) *
         (std::pow(p.eps / p.eps0, m) + std::pow(p.eps0 / (p.E * p.delta), m) +
          std::pow(p.E * p.t / lam, d) * std::pow(p.eps0 / lam, m));
}

namespace {

// True when some lattice translate of the segment P0 - w s, s in [a, b],
// comes within r of the origin.
bool segment_hits(const Vec& p0, const Vec& w, double a, double b, double r, double lam, int d) {
  if (b < a) return false;
  const double ww = norm2(w);
  std::array<long, 3> lo{0, 0, 0}, hi{0, 0, 0};
  for (int k = 0; k < d; ++k) {
    const double qa = p0[k] - w[k] * a;
    const double qb = p0[k] - w[k] * b;
    lo[k] = static_cast<long>(std::ceil((-std::max(qa, qb) - r) / lam));
    hi[k] = static_cast<long>(std::floor((-std::min(qa, qb) + r) / lam));
    if (lo[k] > hi[k]) return false;
  }
  const double r2 = r * r;
  std::array<long, 3> n = lo;
  while (true) {
    Vec p = p0;
    for (int k = 0; k < d; ++k) p[k] += lam * static_cast<double>(n[k]);
    double s = a;
    if (ww > 0.0) s = std::clamp(dot(p, w) / ww, a, b);
    if (norm2(p - w * s) <= r2) return true;
    int k = 0;
    while (k < d && n[k] == hi[k]) {
      n[k] = lo[k];
      ++k;
    }
    if (k == d) return false;
    ++n[k];
  }
}

Vec uniform_in_ball(double radius, int d, Rng& rng) {
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unif;
  Vec v;
  double r2 = 0.0;
  do {
    r2 = 0.0;
    for (int k = 0; k < d; ++k) {
      v[k] = gauss(rng);
      r2 += v[k] * v[k];
    }
  } while (r2 == 0.0);
  const double r = radius * std::pow(unif(rng), 1.0 / d);
  return v * (r / std::sqrt(r2));
}

struct Tally {
  std::uint64_t hits = 0, hits_i = 0, hits_ii = 0;
};

}  // namespace

PathologicalEstimate estimate_pathological_set(const LemmaParameters& params, const Vec& x1,
                                               const Vec& x2, const Vec& v1,
                                               std::uint64_t samples, Rng& rng, int workers) {
  params.validate();
  require(samples > 0, "need at least one sample");
  const auto& g = params.geom;
  check_dimension(x1, g);
  check_dimension(x2, g);
  check_dimension(v1, g);
  require(norm(v1) <= params.E, "|v1| must not exceed E");
  const Vec p0 = minimal_image(x1, x2, g);
  if (norm(p0) < params.eps0) throw Error("points closer than eps0");

  constexpr std::uint64_t chunk = 65536;
  const std::uint64_t base = rng();
  const std::size_t chunks = static_cast<std::size_t>((samples + chunk - 1) / chunk);
  std::vector<Tally> tally(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    Rng local = make_rng(base, c);
    const std::uint64_t n = std::min<std::uint64_t>(chunk, samples - c * chunk);
    Tally t;
    for (std::uint64_t s = 0; s < n; ++s) {
      const Vec v2 = uniform_in_ball(params.E, g.dim, local);
      const Vec w = v1 - v2;
      const bool bad_i = segment_hits(p0, w, 0.0, params.t, params.eps, g.side, g.dim);
      const bool bad_ii =
          params.delta < params.t &&
          segment_hits(p0, w, params.delta, params.t, params.eps0, g.side, g.dim);
      t.hits_i += bad_i;
      t.hits_ii += bad_ii;
      t.hits += bad_i || bad_ii;
    }
    tally[c] = t;
  });

  PathologicalEstimate out;
  out.samples = samples;
  for (const auto& t : tally) {
    out.hits += t.hits;
    out.hits_i += t.hits_i;
    out.hits_ii += t.hits_ii;
  }
  const double vol = unit_ball_volume(g.dim) * std::pow(params.E, g.dim);
  const double n = static_cast<double>(samples);
  const double p = static_cast<double>(out.hits) / n;
  out.estimate = vol * p;
  out.measure_i = vol * static_cast<double>(out.hits_i) / n;
  out.measure_ii = vol * static_cast<double>(out.hits_ii) / n;
  constexpr double z = 1.959963984540054;
  const double denom = 1.0 + z * z / n;
  const double centre = (p + z * z / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  out.ci = vol * std::max(0.0, centre + half - p);
  return out;
}

double fit_lemma_constant(std::span<const LemmaPoint> calibration) {
  require(!calibration.empty(), "empty calibration set");
  double c = 0.0;
  for (const auto& pt : calibration) {
    LemmaParameters unit = pt.params;
    unit.C = 1.0;
    c = std::max(c, (pt.result.estimate + pt.result.ci) / lemma_bound(unit));
  }
  return c;
}

}  // namespace hsdiff
