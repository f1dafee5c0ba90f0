#include "hsdiff/md.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <tuple>

#include "hsdiff/error.hpp"

namespace hsdiff {

bool Simulation::Later::operator()(const Event& l, const Event& r) const {
  if (l.time != r.time) return l.time > r.time;
  if (l.a != r.a) return l.a > r.a;
  return l.b > r.b;
}

Simulation::Simulation(const Configuration& conf, const GasParameters& params,
                       SimOptions options)
    : params_(params), options_(options) {
  params_.geom.validate();
  require(!conf.states.empty(), "simulation needs at least one particle");
  require(params_.eps > 0.0 && params_.eps < params_.geom.side / 4.0,
          "eps must lie in (0, side/4)");
  require(conf.tagged_index < conf.states.size(), "tagged index out of range");
  require(conf.states.size() < static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()),
          "too many particles");
  params_.n = conf.states.size();
  tagged_index_ = conf.tagged_index;

  const std::size_t n = conf.states.size();
  x_.resize(n);
  v_.resize(n);
  tp_.assign(n, 0.0);
  image_.assign(n, {0, 0, 0});
  count_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    check_dimension(conf.states[i].position, params_.geom);
    check_dimension(conf.states[i].velocity, params_.geom);
    x_[i] = reduce(conf.states[i].position, params_.geom);
    v_[i] = conf.states[i].velocity;
    speed_sum0_ += norm(v_[i]);
  }
  p0_ = total_momentum();
  e0_ = kinetic_energy();

  const int d = params_.geom.dim;
  const double side = params_.geom.side;
  const double target = std::max(2.0 * params_.eps, options_.cell_side_min);
  ncell_ = std::max(3, static_cast<int>(std::floor(side / target)));
  const double cap = std::max(27.0, 4.0 * static_cast<double>(n));
  while (ncell_ > 3 && std::pow(ncell_, d) > cap) --ncell_;
  cell_w_ = side / ncell_;
  build_cells();

  // exclusion check over neighbouring cells
  const double tol = params_.eps * (1.0 - 1e-9);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t k = 0; k < n; ++k) {
      if (k == i) continue;
      if (n > 64) break;
      if (torus_distance(x_[i], x_[k], params_.geom) < tol) throw Error("exclusion violated");
    }
  }
  if (n > 64) {
    const int zr = d == 3 ? 1 : 0;
    for (std::uint32_t i = 0; i < n; ++i) {
      const auto c = cell_of_[i];
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
          for (int z = -zr; z <= zr; ++z) {
            std::array<int, 3> cc{c[0] + a, c[1] + b, c[2] + z};
            for (int k = 0; k < d; ++k) cc[k] = (cc[k] % ncell_ + ncell_) % ncell_;
            for (auto k : cells_[cell_index(cc)]) {
              if (k != i && torus_distance(x_[i], x_[k], params_.geom) < tol) {
                throw Error("exclusion violated");
              }
            }
          }
    }
  }

  schedule_all();
  record_tagged(0.0);
}

std::size_t Simulation::cell_index(const std::array<int, 3>& c) const {
  std::size_t idx = static_cast<std::size_t>(c[0]) * ncell_ + c[1];
  if (params_.geom.dim == 3) idx = idx * ncell_ + c[2];
  return idx;
}

void Simulation::build_cells() {
  const int d = params_.geom.dim;
  std::size_t total = 1;
  for (int k = 0; k < d; ++k) total *= static_cast<std::size_t>(ncell_);
  cells_.assign(total, {});
  cell_of_.assign(x_.size(), {0, 0, 0});
  for (std::uint32_t i = 0; i < x_.size(); ++i) {
    for (int k = 0; k < d; ++k) {
      cell_of_[i][k] = std::clamp(static_cast<int>(std::floor(x_[i][k] / cell_w_)), 0, ncell_ - 1);
    }
    cells_[cell_index(cell_of_[i])].push_back(i);
  }
}

Vec Simulation::position_at(std::size_t i, double t) const {
  return x_[i] + (t - tp_[i]) * v_[i];
}

bool Simulation::valid(const Event& e) const {
  if (count_[e.a] != e.ca) return false;
  return e.b < 0 || count_[e.b] == e.cb;
}

void Simulation::push(const Event& e) {
  heap_.push_back(e);
  std::push_heap(heap_.begin(), heap_.end(), Later{});
}

void Simulation::predict_crossing(std::uint32_t i) {
  const int d = params_.geom.dim;
  double best = std::numeric_limits<double>::infinity();
  int axis = -1;
  for (int k = 0; k < d; ++k) {
    const double v = v_[i][k];
    if (v == 0.0) continue;
    const int c = cell_of_[i][k];
    const double boundary =
        v > 0.0 ? (c + 1 == ncell_ ? params_.geom.side : (c + 1) * cell_w_) : c * cell_w_;
    const double dt = std::max(0.0, (boundary - x_[i][k]) / v);
    if (dt < best) {
      best = dt;
      axis = k;
    }
  }
  if (axis < 0) return;
  push({tp_[i] + best, static_cast<std::int32_t>(i), -(axis + 1), count_[i], 0});
}

void Simulation::predict_pair(std::uint32_t i, std::uint32_t k, const Vec& shift) {
  const Vec dr = position_at(k, clock_) + shift - position_at(i, clock_);
  const Vec dv = v_[k] - v_[i];
  const auto t = contact_time(dr, dv, params_.eps);
  if (!t) return;
  const auto a = std::min(i, k), b = std::max(i, k);
  push({clock_ + *t, static_cast<std::int32_t>(a), static_cast<std::int32_t>(b), count_[a],
        count_[b]});
}

// Predicts i against the cells at offset `layer` along `axis` (all 3^d
// neighbours when axis < 0).
void Simulation::predict_block(std::uint32_t i, int axis, int layer) {
  const int d = params_.geom.dim;
  const double side = params_.geom.side;
  const auto c = cell_of_[i];
  const int zr = d == 3 ? 1 : 0;
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b)
      for (int z = -zr; z <= zr; ++z) {
        const std::array<int, 3> off{a, b, z};
        if (axis >= 0 && off[axis] != layer) continue;
        std::array<int, 3> cc{0, 0, 0};
        Vec shift;
        for (int k = 0; k < d; ++k) {
          const int raw = c[k] + off[k];
          if (raw < 0) {
            cc[k] = raw + ncell_;
            shift[k] = -side;
          } else if (raw >= ncell_) {
            cc[k] = raw - ncell_;
            shift[k] = side;
          } else {
            cc[k] = raw;
          }
        }
        for (auto k : cells_[cell_index(cc)]) {
          if (k != i) predict_pair(i, k, shift);
        }
      }
}

void Simulation::schedule_all() {
  heap_.clear();
  const int d = params_.geom.dim;
  const double side = params_.geom.side;
  const int zr = d == 3 ? 1 : 0;
  for (std::uint32_t i = 0; i < x_.size(); ++i) {
    predict_crossing(i);
    const auto c = cell_of_[i];
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b)
        for (int z = -zr; z <= zr; ++z) {
          const std::array<int, 3> off{a, b, z};
          std::array<int, 3> cc{0, 0, 0};
          Vec shift;
          for (int k = 0; k < d; ++k) {
            const int raw = c[k] + off[k];
            cc[k] = (raw + ncell_) % ncell_;
            shift[k] = raw < 0 ? -side : (raw >= ncell_ ? side : 0.0);
          }
          for (auto k : cells_[cell_index(cc)]) {
            if (k > i) predict_pair(i, k, shift);
          }
        }
  }
}

void Simulation::compact() {
  std::erase_if(heap_, [this](const Event& e) { return !valid(e); });
  std::make_heap(heap_.begin(), heap_.end(), Later{});
}

void Simulation::record_tagged(double t) {
  const auto i = tagged_index_;
  Vec u = position_at(i, t);
  for (int k = 0; k < params_.geom.dim; ++k) {
    u[k] += params_.geom.side * static_cast<double>(image_[i][k]);
  }
  tagged_.push_back({t, u, v_[i]});
}

void Simulation::do_crossing(std::uint32_t i, int axis, double t) {
  x_[i] = position_at(i, t);
  tp_[i] = t;
  auto& bucket = cells_[cell_index(cell_of_[i])];
  bucket.erase(std::find(bucket.begin(), bucket.end(), i));
  const int dir = v_[i][axis] > 0.0 ? 1 : -1;
  int c = cell_of_[i][axis] + dir;
  if (c == ncell_) {
    c = 0;
    x_[i][axis] -= params_.geom.side;
    ++image_[i][axis];
  } else if (c < 0) {
    c = ncell_ - 1;
    x_[i][axis] += params_.geom.side;
    --image_[i][axis];
  }
  cell_of_[i][axis] = c;
  cells_[cell_index(cell_of_[i])].push_back(i);
  predict_crossing(i);
  predict_block(i, axis, dir);
}

void Simulation::do_collision(std::uint32_t i, std::uint32_t j, double t) {
  x_[i] = position_at(i, t);
  tp_[i] = t;
  x_[j] = position_at(j, t);
  tp_[j] = t;
  const int d = params_.geom.dim;
  const double side = params_.geom.side;
  Vec dr = x_[j] - x_[i];
  for (int k = 0; k < d; ++k) dr[k] -= side * std::floor(dr[k] / side + 0.5);
  const double r = norm(dr);
  if (std::abs(r - params_.eps) > 1e-6 * params_.eps) {
    throw InvariantFailure("collision away from contact: distance " + std::to_string(r) +
                           " at t=" + std::to_string(t));
  }
  const Vec omega = dr / r;
  const double un = dot(v_[i] - v_[j], omega);
  if (un > 0.0) {
    CollisionRecord rec;
    if (options_.record_log) {
      rec.time = t;
      rec.i = i;
      rec.j = j;
      rec.omega = omega;
      rec.vi_pre = v_[i];
      rec.vj_pre = v_[j];
    }
    v_[i] -= un * omega;
    v_[j] += un * omega;
    ++collisions_;
    if (options_.record_log) {
      rec.vi_post = v_[i];
      rec.vj_post = v_[j];
      log_.push_back(rec);
    }
  }
  ++count_[i];
  ++count_[j];
  if (i == tagged_index_ || j == tagged_index_) record_tagged(t);
  predict_crossing(i);
  predict_crossing(j);
  predict_block(i, -1, 0);
  predict_block(j, -1, 0);
}

void Simulation::process(const Event& e) {
  if (e.time < clock_) {
    throw InvariantFailure("event-time regression: " + std::to_string(e.time) + " < " +
                           std::to_string(clock_));
  }
  clock_ = e.time;
  ++events_;
  if (e.b < 0) {
    do_crossing(static_cast<std::uint32_t>(e.a), -e.b - 1, e.time);
  } else {
    do_collision(static_cast<std::uint32_t>(e.a), static_cast<std::uint32_t>(e.b), e.time);
  }
  const std::size_t limit = std::max<std::size_t>(65536, 16 * x_.size());
  if (heap_.size() > limit) compact();
}

void Simulation::run_until(double t_end) {
  require(t_end >= clock_, "run_until: t_end precedes the clock");
  while (!heap_.empty() && heap_.front().time <= t_end) {
    std::pop_heap(heap_.begin(), heap_.end(), Later{});
    const Event e = heap_.back();
    heap_.pop_back();
    if (valid(e)) process(e);
  }
  clock_ = t_end;
  record_tagged(t_end);
}

void Simulation::run_collisions(std::size_t count) {
  const std::size_t target = collisions_ + count;
  while (collisions_ < target && !heap_.empty()) {
    std::pop_heap(heap_.begin(), heap_.end(), Later{});
    const Event e = heap_.back();
    heap_.pop_back();
    if (valid(e)) process(e);
  }
}

void Simulation::reverse_velocities() {
  for (std::size_t i = 0; i < x_.size(); ++i) {
    x_[i] = position_at(i, clock_);
    tp_[i] = clock_;
    v_[i] = -v_[i];
    ++count_[i];
  }
  p0_ = -p0_;
  schedule_all();
}

ParticleState Simulation::particle(std::size_t i) const {
  require(i < x_.size(), "particle index out of range");
  return {reduce(position_at(i, clock_), params_.geom), v_[i]};
}

Vec Simulation::unwrapped_position(std::size_t i) const {
  require(i < x_.size(), "particle index out of range");
  Vec u = position_at(i, clock_);
  for (int k = 0; k < params_.geom.dim; ++k) {
    u[k] += params_.geom.side * static_cast<double>(image_[i][k]);
  }
  return u;
}

Configuration Simulation::configuration() const {
  Configuration conf;
  conf.tagged_index = tagged_index_;
  conf.states.reserve(x_.size());
  for (std::size_t i = 0; i < x_.size(); ++i) conf.states.push_back(particle(i));
  return conf;
}

Vec Simulation::total_momentum() const {
  Vec p;
  for (const auto& v : v_) p += v;
  return p;
}

double Simulation::kinetic_energy() const {
  double e = 0.0;
  for (const auto& v : v_) e += 0.5 * norm2(v);
  return e;
}

double Simulation::min_pair_distance() const {
  double best = std::numeric_limits<double>::infinity();
  std::vector<Vec> now(x_.size());
  for (std::size_t i = 0; i < x_.size(); ++i) now[i] = position_at(i, clock_);
  for (std::size_t i = 0; i < now.size(); ++i) {
    for (std::size_t k = i + 1; k < now.size(); ++k) {
      best = std::min(best, torus_distance(now[i], now[k], params_.geom));
    }
  }
  return best;
}

std::optional<double> Simulation::next_collision_time() const {
  std::optional<double> best;
  for (const auto& e : heap_) {
    if (e.b >= 0 && valid(e) && (!best || e.time < *best)) best = e.time;
  }
  return best;
}

std::vector<ScheduledPair> Simulation::scheduled_pairs() const {
  std::vector<ScheduledPair> out;
  for (const auto& e : heap_) {
    if (e.b >= 0 && valid(e)) {
      out.push_back({e.time, static_cast<std::uint32_t>(e.a), static_cast<std::uint32_t>(e.b)});
    }
  }
  std::sort(out.begin(), out.end(), [](const ScheduledPair& l, const ScheduledPair& r) {
    return std::tie(l.time, l.i, l.j) < std::tie(r.time, r.i, r.j);
  });
  return out;
}

Simulation init_simulation(const Configuration& conf, const GasParameters& params,
                           SimOptions options) {
  return Simulation(conf, params, options);
}

double collision_frequency(const Simulation& sim) {
  require(sim.clock() > 0.0, "collision_frequency needs clock > 0");
  return 2.0 * static_cast<double>(sim.collision_count()) /
         (static_cast<double>(sim.size()) * sim.clock());
}

ConservationReport conservation_report(const Simulation& sim) {
  ConservationReport r;
  const double scale = sim.initial_speed_sum();
  if (scale > 0.0) r.momentum_drift = norm(sim.total_momentum() - sim.initial_momentum()) / scale;
  const double e0 = sim.initial_energy();
  if (e0 > 0.0) r.energy_drift = std::abs(sim.kinetic_energy() - e0) / e0;
  return r;
}

std::vector<TrajectorySample> tagged_trajectory(const Simulation& sim) {
  return sim.tagged_samples();
}

namespace {

void put_f64(std::ostream& os, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  if constexpr (std::endian::native == std::endian::big) {
    bits = __builtin_bswap64(bits);
  }
  char buf[8];
  std::memcpy(buf, &bits, 8);
  os.write(buf, 8);
}

}  // namespace

void write_collision_log(std::ostream& os, const std::vector<CollisionRecord>& log, int d,
                         LogFormat format) {
  require(d == 2 || d == 3, "dimension must be 2 or 3");
  if (format == LogFormat::binary) {
    for (const auto& r : log) {
      put_f64(os, r.time);
      put_f64(os, r.i);
      put_f64(os, r.j);
      for (const Vec* v : {&r.omega, &r.vi_pre, &r.vj_pre, &r.vi_post, &r.vj_post}) {
        for (int k = 0; k < d; ++k) put_f64(os, (*v)[k]);
      }
    }
    return;
  }
  os << std::setprecision(17);
  for (const auto& r : log) {
    os << r.time << ' ' << r.i << ' ' << r.j;
    for (const Vec* v : {&r.omega, &r.vi_pre, &r.vj_pre, &r.vi_post, &r.vj_post}) {
      for (int k = 0; k < d; ++k) os << ' ' << (*v)[k];
    }
    os << '\n';
  }
}

void write_trajectory_csv(std::ostream& os, const std::vector<TrajectorySample>& samples,
                          int d) {
  require(d == 2 || d == 3, "dimension must be 2 or 3");
  os << 't';
  for (int k = 1; k <= d; ++k) os << ",x" << k;
  for (int k = 1; k <= d; ++k) os << ",v" << k;
  os << '\n' << std::setprecision(17);
  for (const auto& s : samples) {
    os << s.time;
    for (int k = 0; k < d; ++k) os << ',' << s.position[k];
    for (int k = 0; k < d; ++k) os << ',' << s.velocity[k];
    os << '\n';
  }
}

}  // namespace hsdiff
