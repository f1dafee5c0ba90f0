import math

import numpy as np
import pytest

import hsdiff


def test_equilibrium_sample_respects_exclusion():
    x, v = hsdiff.sample_equilibrium(n=200, eps=0.05, side=3.0, seed=4)
    assert x.shape == (200, 2) and v.shape == (200, 2)
    assert hsdiff.validate_exclusion(x, 0.05, 3.0)
    assert np.all((x >= 0) & (x < 3.0))


def test_simulation_conserves_and_reverses():
    x, v = hsdiff.sample_equilibrium(n=100, eps=0.09, side=3.0, seed=1)
    sim = hsdiff.Simulation(x, v, eps=0.09, side=3.0)
    # few collisions per particle: reversal error grows exponentially with them
    sim.run_collisions(100)
    assert sim.collision_count == 100
    drift = sim.conservation()
    assert drift["energy_drift"] < 1e-10
    assert sim.min_pair_distance() >= 0.09 * (1 - 1e-9)
    t = sim.clock
    sim.reverse_velocities()
    sim.run_until(2 * t)
    back = sim.unwrapped_positions()
    assert np.max(np.abs(back - x)) < 1e-6


def test_backward_tree_shape():
    x, v = hsdiff.sample_equilibrium(n=100, eps=0.09, side=3.0, seed=2)
    sim = hsdiff.Simulation(x, v, eps=0.09, side=3.0)
    sim.run_until(1.0)
    tree = sim.backward_tree(root=0, window=1.0)
    assert tree["nodes"][0][0] == 0
    assert len(tree["edges"]) == len(tree["nodes"]) - 1


def test_rates_and_kappa():
    assert hsdiff.mean_collision_rate(1.0, 2) == pytest.approx(2 * math.sqrt(math.pi))
    assert hsdiff.total_jump_rate([0.0, 0.0]) == pytest.approx(2 * math.sqrt(math.pi / 2), rel=1e-9)
    k = hsdiff.kappa_spectral(dim=2, grid_div=8)
    assert 0.25 < k["kappa"] < 0.32


def test_jump_path_is_continuous():
    x, v = hsdiff.jump_path([1.0, 0.0], t_end=5.0, dt=0.01, seed=3)
    assert x.shape[0] == 501
    steps = np.linalg.norm(np.diff(x, axis=0), axis=1)
    assert np.all(steps <= np.linalg.norm(v[:-1], axis=1) * 0.01 + np.linalg.norm(v[1:], axis=1) * 0.01 + 1e-12)


def test_lemma_bound_and_estimate():
    b = hsdiff.lemma_bound(E=1, eps=1e-3, eps0=1e-2, delta=1, t=1, side=10, dim=3)
    assert b == pytest.approx(0.010100001, rel=1e-12)
    r = hsdiff.estimate_pathological_set(1, 0.01, 0.05, 0.2, 1.0, 1.0, [0.5, 0.5], [0.7, 0.55],
                                         [0.2, 0.1], samples=20000, seed=1)
    assert 0 <= r["measure_i"] <= r["estimate"] <= math.pi


def test_config_and_experiment():
    text = "[experiment]\nname = kappa\n[analysis]\ngrid_div = 6\nkappa_paths = 10\nkappa_duration_mft = 300\n"
    assert "grid_div = 6" in hsdiff.resolve_config(text)
    manifest = hsdiff.run_experiment(text)
    assert manifest["experiment"] == "kappa"
    assert manifest["status"] in ("ok", "checks-failed")
    assert manifest["summary"]["kappa_spectral"] > 0
    with pytest.raises(hsdiff.ConfigError):
        hsdiff.resolve_config("[experiment]\nname = nope\n")
