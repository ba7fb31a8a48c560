"""Rotated multi-fidelity Gaussian processes with sufficient dimension reduction."""

__version__ = "0.1.0"

from .benchmarks import (  # noqa: E402
    advection_problem,
    elliptic_problem,
    linear_problem,
    nonlinear_problem,
    relative_error,
    solve_elliptic,
)
from .data import Dataset, Fidelity, make_rng  # noqa: E402
from .gp import GPConfig, fit_gp, predict  # noqa: E402
from .multifidelity import fit_nargp, predict_nargp  # noqa: E402
from .pipeline import RmfgpConfig, rotate_inputs, run_rmfgp  # noqa: E402
from .sdr import bic_dimension, save, sir, subspace_distance  # noqa: E402

__all__ = [
    "Dataset", "Fidelity", "GPConfig", "RmfgpConfig", "advection_problem", "bic_dimension",
    "elliptic_problem", "fit_gp", "fit_nargp", "linear_problem", "make_rng",
    "nonlinear_problem", "predict", "predict_nargp", "relative_error", "rotate_inputs",
    "run_rmfgp", "save", "sir", "solve_elliptic", "subspace_distance",
]
