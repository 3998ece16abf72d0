"""Equilibrium price formation with a major agent and a minor population."""

import json as _json

from . import _eqprice
from ._eqprice import (
    AssumptionError,
    DEFAULT_SEED,
    Model,
    SizingError,
    SolverError,
    UnsupportedError,
    ValidationError,
    __version__,
    epsilon_rate,
    load_model,
    model_from_json,
    parse_model,
    solve_mfg,
    solve_n,
    wasserstein2,
)


def check_assumptions(model, T=1.0):
    """Assumption report as a dict."""
    return _json.loads(_eqprice.check_assumptions(model, T))


def convergence_study(model, N_list, resamples=64, seed=DEFAULT_SEED, K=4, T=1.0, threads=1):
    """Returns (summary dict, rows CSV text)."""
    summary, csv = _eqprice.convergence_study(model, list(N_list), resamples, seed, K, T, threads)
    return _json.loads(summary), csv


def perturbation_test(model, level="major_n", K=4, T=1.0, directions=20, seed=DEFAULT_SEED, threads=1):
    """Perturbation summary as a dict."""
    return _json.loads(_eqprice.perturbation_test(model, level, K, T, directions, seed, threads))


def model_json(model):
    """The model as a JSON-compatible dict."""
    return _json.loads(model.to_json())


__all__ = [
    "AssumptionError",
    "DEFAULT_SEED",
    "Model",
    "SizingError",
    "SolverError",
    "UnsupportedError",
    "ValidationError",
    "__version__",
    "check_assumptions",
    "convergence_study",
    "epsilon_rate",
    "load_model",
    "model_from_json",
    "model_json",
    "parse_model",
    "perturbation_test",
    "solve_mfg",
    "solve_n",
    "wasserstein2",
]
