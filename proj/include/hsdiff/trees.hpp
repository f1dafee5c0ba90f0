#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hsdiff/geometry.hpp"
#include "hsdiff/md.hpp"
#include "hsdiff/rng.hpp"

namespace hsdiff {

struct TreeNode {
  std::uint32_t id;
  double entry_time;  // observation time for the root
  int parent;         // node index, -1 for the root
  int depth;
};

struct TreeEdge {
  double time;
  std::uint32_t parent;  // particle ids
  std::uint32_t child;
  Vec omega;
};

/// Collision between two particles that were both already in the tree.
struct InternalCollision {
  double time;
  std::uint32_t i;
  std::uint32_t j;
};

/// Backward collision tree of one particle over [t - window, t].
struct CollisionTree {
  std::uint32_t root = 0;
  double t = 0.0;
  double window = 0.0;
  std::vector<TreeNode> nodes;
  std::vector<TreeEdge> edges;
  std::vector<InternalCollision> internal;

  bool contains(std::uint32_t id) const;
  int depth() const;
};

/// Time span covered by a collision log.
struct LogCoverage {
  double start = 0.0;
  double end = 0.0;
};

/// Scans the log backward from t. A collision between a member and a
/// non-member adjoins the non-member; a collision between two members is kept
/// as an internal collision. Throws Error when [t - window, t] is not inside
/// the coverage.
CollisionTree build_backward_tree(std::span<const CollisionRecord> log, std::uint32_t tagged,
                                  double t, double window, LogCoverage coverage);

struct RecollisionRecord {
  std::uint32_t i;
  std::uint32_t j;
  // every collision time of the pair inside the window from the moment the
  // first of them joined the tree; includes the adjunction edge when the
  // pair's own collision adjoined one of them
  std::vector<double> times;
};

/// One record per pair with at least one internal collision, ordered by the
/// latest time.
std::vector<RecollisionRecord> detect_recollisions(const CollisionTree& tree);

struct BranchingProfile {
  double tau = 0.0;
  std::vector<int> counts;  // counts[k-1] = adjunctions in [t - k tau, t - (k-1) tau)
};

BranchingProfile branching_profile(const CollisionTree& tree, double tau);

/// True iff n_k < a^k for every slice k.
bool admissible(const BranchingProfile& profile, double a);

/// Parameters of the geometric lemma on the pathological velocity set.
struct LemmaParameters {
  double E = 1.0;
  double eps = 0.01;
  double eps0 = 0.1;
  double delta = 1.0;
  double t = 1.0;
  TorusGeometry geom{1.0, 2};
  double C = 1.0;

  /// Throws ContractViolation unless 0 < eps < eps0 < side and E, delta, t > 0.
  void validate() const;
};

/// C E^d ((eps/eps0)^(d-1) + (eps0/(E delta))^(d-1) + (E t/side)^d (eps0/side)^(d-1)).
/// Accepts eps = 0 and t = 0 for term isolation.
double lemma_bound(const LemmaParameters& p);

struct PathologicalEstimate {
  double estimate = 0.0;   // Lebesgue measure of the set
  double ci = 0.0;         // upper 95% half-width (Wilson)
  double measure_i = 0.0;  // collision on (0, t]
  double measure_ii = 0.0; // eps0-approach on (delta, t]
  std::uint64_t samples = 0;
  std::uint64_t hits = 0;
  std::uint64_t hits_i = 0;
  std::uint64_t hits_ii = 0;
};

/// Monte Carlo over v2 uniform in the ball |v2| <= E. Under the backward flow
/// x1 - v1 s, x2 - v2 s, a sample is pathological when some periodic image
/// comes within eps for s in (0, t], or within eps0 for s in (delta, t].
/// Each sample is decided by the exact closest approach of the relative
/// segment to every lattice image. Samples are drawn in chunks of 65536 from
/// streams derived from one draw of `rng`, so the result does not depend on
/// `workers`. Throws Error when d(x1, x2) < eps0 and ContractViolation when
/// |v1| > E.
PathologicalEstimate estimate_pathological_set(const LemmaParameters& params, const Vec& x1,
                                               const Vec& x2, const Vec& v1,
                                               std::uint64_t samples, Rng& rng,
                                               int workers = 1);

struct LemmaPoint {
  LemmaParameters params;
  PathologicalEstimate result;
};

/// Smallest C with estimate + ci <= bound on every calibration point.
double fit_lemma_constant(std::span<const LemmaPoint> calibration);

}  // namespace hsdiff
