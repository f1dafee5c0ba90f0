"""Hard-sphere gas, linear Boltzmann process and diffusion limit."""

import json as _json

from ._core import (
    ConfigError,
    ContractViolation,
    Error,
    InvariantFailure,
    Simulation,
    estimate_pathological_set,
    jump_path,
    kappa_spectral,
    lemma_bound,
    mean_collision_rate,
    resolve_config,
    sample_equilibrium,
    total_jump_rate,
    validate_exclusion,
)
from ._core import run_experiment as _run_experiment


def run_experiment(text, write=False):
    """Run the experiment described by INI `text` and return the manifest as a dict."""
    return _json.loads(_run_experiment(text, write))


__all__ = [
    "ConfigError",
    "ContractViolation",
    "Error",
    "InvariantFailure",
    "Simulation",
    "estimate_pathological_set",
    "jump_path",
    "kappa_spectral",
    "lemma_bound",
    "mean_collision_rate",
    "resolve_config",
    "run_experiment",
    "sample_equilibrium",
    "total_jump_rate",
    "validate_exclusion",
]
