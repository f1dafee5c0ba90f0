#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "hsdiff/equilibrium.hpp"
#include "hsdiff/geometry.hpp"

namespace hsdiff {

struct SimOptions {
  bool record_log = true;
  // Lower bound on the cell side. Larger cells mean fewer crossing events but
  // more pair predictions per event; zero selects the 2 eps default.
  double cell_side_min = 0.0;
};

struct CollisionRecord {
  double time = 0.0;
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  Vec omega;  // unit normal from i to j at contact
  Vec vi_pre, vj_pre, vi_post, vj_post;
};

struct TrajectorySample {
  double time = 0.0;
  Vec position;  // unwrapped
  Vec velocity;
};

struct ScheduledPair {
  double time;
  std::uint32_t i;
  std::uint32_t j;
};

struct ConservationReport {
  double momentum_drift = 0.0;
  double energy_drift = 0.0;
};

/// Event-driven hard-sphere dynamics on the torus.
///
/// Particles live in a uniform cell grid with at least three cells per axis.
/// Pair events are predicted only between particles in adjacent cells, using
/// the periodic image implied by the cell offset, and each particle also has a
/// pending cell-crossing event. Events carry the collision counters of their
/// particles at scheduling time and are dropped at pop when those have moved.
/// Each particle stores its position at its own last event time.
class Simulation {
 public:
  Simulation(const Configuration& conf, const GasParameters& params, SimOptions options = {});

  /// Processes every event with time <= t_end, then sets the clock to t_end.
  void run_until(double t_end);
  /// Processes events until `count` further collisions have happened; the
  /// clock stops at the last one.
  void run_collisions(std::size_t count);

  /// Synchronizes all particles to the clock, negates every velocity and
  /// reschedules from scratch.
  void reverse_velocities();

  double clock() const { return clock_; }
  std::size_t size() const { return x_.size(); }
  std::size_t collision_count() const { return collisions_; }
  std::size_t event_count() const { return events_; }
  const GasParameters& params() const { return params_; }
  int cells_per_axis() const { return ncell_; }
  double cell_side() const { return cell_w_; }

  const std::vector<CollisionRecord>& log() const { return log_; }
  const std::vector<TrajectorySample>& tagged_samples() const { return tagged_; }
  std::size_t tagged_index() const { return tagged_index_; }

  /// In-box state of particle i at the current clock.
  ParticleState particle(std::size_t i) const;
  Vec unwrapped_position(std::size_t i) const;
  Configuration configuration() const;

  Vec total_momentum() const;
  double kinetic_energy() const;
  Vec initial_momentum() const { return p0_; }
  double initial_energy() const { return e0_; }
  double initial_speed_sum() const { return speed_sum0_; }

  /// O(N^2) minimum torus distance at the current clock.
  double min_pair_distance() const;
  /// Earliest still-valid pair event in the queue.
  std::optional<double> next_collision_time() const;
  std::vector<ScheduledPair> scheduled_pairs() const;

 private:
  struct Event {
    double time;
    std::int32_t a;
    std::int32_t b;  // partner index, or -(axis + 1) for a crossing
    std::uint32_t ca;
    std::uint32_t cb;
  };
  struct Later {
    bool operator()(const Event& l, const Event& r) const;
  };

  bool valid(const Event& e) const;
  Vec position_at(std::size_t i, double t) const;
  std::size_t cell_index(const std::array<int, 3>& c) const;
  void build_cells();
  void schedule_all();
  void push(const Event& e);
  void predict_crossing(std::uint32_t i);
  void predict_pair(std::uint32_t i, std::uint32_t k, const Vec& shift);
  void predict_block(std::uint32_t i, int axis, int layer);
  void process(const Event& e);
  void do_crossing(std::uint32_t i, int axis, double t);
  void do_collision(std::uint32_t i, std::uint32_t j, double t);
  void compact();
  void record_tagged(double t);

  GasParameters params_;
  SimOptions options_;
  double clock_ = 0.0;
  std::size_t collisions_ = 0;
  std::size_t events_ = 0;

  std::vector<Vec> x_;  // in-box position at time tp_
  std::vector<Vec> v_;
  std::vector<double> tp_;
  std::vector<std::array<std::int64_t, 3>> image_;
  std::vector<std::uint32_t> count_;
  std::vector<std::array<int, 3>> cell_of_;
  std::vector<std::vector<std::uint32_t>> cells_;
  int ncell_ = 3;
  double cell_w_ = 1.0;

  std::vector<Event> heap_;
  std::vector<CollisionRecord> log_;
  std::vector<TrajectorySample> tagged_;
  std::size_t tagged_index_ = 0;

  Vec p0_;
  double e0_ = 0.0;
  double speed_sum0_ = 0.0;
};

/// Validates exclusion (to 1e-9 relative) and schedules all initial events.
Simulation init_simulation(const Configuration& conf, const GasParameters& params,
                           SimOptions options = {});

/// 2 * collisions / (N * clock). Requires clock > 0.
double collision_frequency(const Simulation& sim);

/// Momentum drift is |P - P0| over the initial sum of speeds (P0 is near zero
/// for equilibrium draws); energy drift is |E - E0| / E0.
ConservationReport conservation_report(const Simulation& sim);

/// Tagged samples: the initial point, every tagged collision and every
/// run_until stop, in time order.
std::vector<TrajectorySample> tagged_trajectory(const Simulation& sim);

enum class LogFormat { text, binary };

/// One record per collision: time, i, j, omega, vi_pre, vj_pre, vi_post,
/// vj_post, with vectors truncated to d components. Binary mode writes every
/// field as a little-endian f64.
void write_collision_log(std::ostream& os, const std::vector<CollisionRecord>& log, int d,
                         LogFormat format);

/// CSV with header "t,x1..xd,v1..vd".
void write_trajectory_csv(std::ostream& os, const std::vector<TrajectorySample>& samples,
                          int d);

}  // namespace hsdiff
