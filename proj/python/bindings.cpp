#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hsdiff/diffusion.hpp"
#include "hsdiff/equilibrium.hpp"
#include "hsdiff/error.hpp"
#include "hsdiff/harness.hpp"
#include "hsdiff/linear_boltzmann.hpp"
#include "hsdiff/md.hpp"
#include "hsdiff/trees.hpp"

namespace py = pybind11;
using namespace hsdiff;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

GasParameters gas(std::size_t n, double eps, double side, int dim, double beta) {
  GasParameters p;
  p.n = n;
  p.eps = eps;
  p.geom = {side, dim};
  p.beta = beta;
  return p;
}

Array to_array(const std::vector<Vec>& v, int d) {
  Array a({static_cast<py::ssize_t>(v.size()), static_cast<py::ssize_t>(d)});
  auto m = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int k = 0; k < d; ++k) m(i, k) = v[i][k];
  return a;
}

std::vector<Vec> from_array(const Array& a, int d) {
  if (a.ndim() != 2 || a.shape(1) != d) throw ContractViolation("expected an (n, d) array");
  auto m = a.unchecked<2>();
  std::vector<Vec> out(static_cast<std::size_t>(a.shape(0)));
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int k = 0; k < d; ++k) out[i][k] = m(i, k);
  return out;
}

Vec vec(const std::vector<double>& x) {
  if (x.size() < 2 || x.size() > 3) throw ContractViolation("vectors need 2 or 3 components");
  Vec v;
  for (std::size_t k = 0; k < x.size(); ++k) v[k] = x[k];
  return v;
}

Configuration configuration(const Array& x, const Array& v, int d) {
  const auto xs = from_array(x, d);
  const auto vs = from_array(v, d);
  if (xs.size() != vs.size()) throw ContractViolation("positions and velocities differ in length");
  Configuration c;
  for (std::size_t i = 0; i < xs.size(); ++i) c.states.push_back({xs[i], vs[i]});
  return c;
}

py::dict tree_dict(const CollisionTree& t) {
  py::list nodes, edges;
  for (const auto& n : t.nodes) nodes.append(py::make_tuple(n.id, n.entry_time, n.parent, n.depth));
  for (const auto& e : t.edges) edges.append(py::make_tuple(e.time, e.parent, e.child));
  py::dict d;
  d["root"] = t.root;
  d["nodes"] = nodes;
  d["edges"] = edges;
  d["internal"] = t.internal.size();
  d["recollisions"] = detect_recollisions(t).size();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hard-sphere dynamics, linear Boltzmann process and diffusion estimators";

  // translators run in reverse order of registration: base class first
  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", error.ptr());
  py::register_exception<InvariantFailure>(m, "InvariantFailure", error.ptr());
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);

  m.def(
      "sample_equilibrium",
      [](std::size_t n, double eps, double side, int dim, double beta, std::uint64_t seed) {
        const auto p = gas(n, eps, side, dim, beta);
        p.validate();
        Rng rng(seed);
        const auto c = sample_equilibrium(p, rng);
        std::vector<Vec> x, v;
        for (const auto& s : c.states) {
          x.push_back(s.position);
          v.push_back(s.velocity);
        }
        return py::make_tuple(to_array(x, dim), to_array(v, dim));
      },
      py::arg("n"), py::arg("eps"), py::arg("side"), py::arg("dim") = 2, py::arg("beta") = 1.0,
      py::arg("seed") = 0, "Positions and Maxwellian velocities on the exclusion domain.");

  m.def(
      "validate_exclusion",
      [](const Array& x, double eps, double side) {
        const int d = static_cast<int>(x.shape(1));
        Array v({x.shape(0), x.shape(1)});
        std::fill(v.mutable_data(), v.mutable_data() + v.size(), 0.0);
        return validate_exclusion(configuration(x, v, d), eps, {side, d});
      },
      py::arg("positions"), py::arg("eps"), py::arg("side"));

  py::class_<Simulation>(m, "Simulation")
      .def(py::init([](const Array& x, const Array& v, double eps, double side, double beta,
                       bool record_log) {
             const int d = static_cast<int>(x.shape(1));
             const auto c = configuration(x, v, d);
             auto p = gas(c.states.size(), eps, side, d, beta);
             return Simulation(c, p, {record_log, 0.0});
           }),
           py::arg("positions"), py::arg("velocities"), py::arg("eps"), py::arg("side"),
           py::arg("beta") = 1.0, py::arg("record_log") = true)
      .def("run_until", &Simulation::run_until, py::arg("t_end"),
           py::call_guard<py::gil_scoped_release>())
      .def("run_collisions", &Simulation::run_collisions, py::arg("count"),
           py::call_guard<py::gil_scoped_release>())
      .def("reverse_velocities", &Simulation::reverse_velocities)
      .def_property_readonly("clock", &Simulation::clock)
      .def_property_readonly("collision_count", &Simulation::collision_count)
      .def_property_readonly("event_count", &Simulation::event_count)
      .def("positions",
           [](const Simulation& s) {
             std::vector<Vec> x;
             for (std::size_t i = 0; i < s.size(); ++i) x.push_back(s.particle(i).position);
             return to_array(x, s.params().geom.dim);
           })
      .def("unwrapped_positions",
           [](const Simulation& s) {
             std::vector<Vec> x;
             for (std::size_t i = 0; i < s.size(); ++i) x.push_back(s.unwrapped_position(i));
             return to_array(x, s.params().geom.dim);
           })
      .def("velocities",
           [](const Simulation& s) {
             std::vector<Vec> v;
             for (std::size_t i = 0; i < s.size(); ++i) v.push_back(s.particle(i).velocity);
             return to_array(v, s.params().geom.dim);
           })
      .def("conservation",
           [](const Simulation& s) {
             const auto r = conservation_report(s);
             return py::dict(py::arg("momentum_drift") = r.momentum_drift,
                             py::arg("energy_drift") = r.energy_drift);
           })
      .def("collision_frequency", [](const Simulation& s) { return collision_frequency(s); })
      .def("min_pair_distance", &Simulation::min_pair_distance)
      .def(
          "backward_tree",
          [](const Simulation& s, std::uint32_t root, double window) {
            return tree_dict(
                build_backward_tree(s.log(), root, s.clock(), window, {0.0, s.clock()}));
          },
          py::arg("root"), py::arg("window"));

  m.def("mean_collision_rate", &mean_collision_rate, py::arg("beta") = 1.0, py::arg("dim") = 2);
  m.def(
      "total_jump_rate",
      [](const std::vector<double>& v, double beta) {
        return total_jump_rate(vec(v), beta, static_cast<int>(v.size()));
      },
      py::arg("v"), py::arg("beta") = 1.0);
  m.def(
      "kappa_spectral",
      [](int dim, double beta, int grid_div) {
        const double vmax = 6.0 / std::sqrt(beta);
        const auto grid = make_velocity_grid(dim, beta, vmax / grid_div, vmax);
        const auto est = solve_kappa_spectral(assemble_L(grid));
        return py::dict(py::arg("kappa") = est.kappa, py::arg("iterations") = est.iterations,
                        py::arg("residual") = est.residual, py::arg("nodes") = grid.size());
      },
      py::arg("dim") = 2, py::arg("beta") = 1.0, py::arg("grid_div") = 12,
      "Diffusion coefficient from the discretized linear Boltzmann operator.");
  m.def(
      "jump_path",
      [](const std::vector<double>& v0, double t_end, double dt, double beta, std::uint64_t seed) {
        const int d = static_cast<int>(v0.size());
        Rng rng(seed);
        const auto traj = simulate_jump_process({}, vec(v0), t_end, {1.0, d}, rng, {beta, 1.0});
        const auto path = sample_path(traj, dt);
        return py::make_tuple(to_array(path.position, d), to_array(path.velocity, d));
      },
      py::arg("v0"), py::arg("t_end"), py::arg("dt"), py::arg("beta") = 1.0, py::arg("seed") = 0,
      "Unwrapped positions and velocities of the jump process sampled every dt.");

  m.def(
      "lemma_bound",
      [](double E, double eps, double eps0, double delta, double t, double side, int dim,
         double C) {
        LemmaParameters p;
        p.E = E;
        p.eps = eps;
        p.eps0 = eps0;
        p.delta = delta;
        p.t = t;
        p.geom = {side, dim};
        p.C = C;
        return lemma_bound(p);
      },
      py::arg("E"), py::arg("eps"), py::arg("eps0"), py::arg("delta"), py::arg("t"),
      py::arg("side"), py::arg("dim"), py::arg("C") = 1.0);
  m.def(
      "estimate_pathological_set",
      [](double E, double eps, double eps0, double delta, double t, double side,
         const std::vector<double>& x1, const std::vector<double>& x2,
         const std::vector<double>& v1, std::uint64_t samples, std::uint64_t seed) {
        LemmaParameters p;
        p.E = E;
        p.eps = eps;
        p.eps0 = eps0;
        p.delta = delta;
        p.t = t;
        p.geom = {side, static_cast<int>(x1.size())};
        Rng rng(seed);
        const auto r = estimate_pathological_set(p, vec(x1), vec(x2), vec(v1), samples, rng);
        return py::dict(py::arg("estimate") = r.estimate, py::arg("ci") = r.ci,
                        py::arg("measure_i") = r.measure_i, py::arg("measure_ii") = r.measure_ii);
      },
      py::arg("E"), py::arg("eps"), py::arg("eps0"), py::arg("delta"), py::arg("t"),
      py::arg("side"), py::arg("x1"), py::arg("x2"), py::arg("v1"), py::arg("samples"),
      py::arg("seed") = 0);

  m.def(
      "resolve_config", [](const std::string& text) { return parse_config(text).to_ini(); },
      py::arg("text"), "Resolved INI text with every default filled in.");
  m.def(
      "run_experiment",
      [](const std::string& text, bool write) {
        const auto cfg = parse_config(text);
        py::gil_scoped_release release;
        return run_experiment(cfg, write).manifest.to_json();
      },
      py::arg("text"), py::arg("write") = false, "Runs an experiment; returns the manifest JSON.");
}
