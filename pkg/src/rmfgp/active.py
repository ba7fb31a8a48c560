"""Variance-driven acquisition over the low-fidelity candidate pool."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import as_finite_matrix
from .errors import EmptyPool
from .gp import GPModel, predict
from .multifidelity import DEFAULT_N_MC, NARGPModel, predict_nargp


@dataclass
class AcquisitionRecord:
    iteration: int
    chosen: list
    test_relative_error: float
    n_high: int


@dataclass
class AcquisitionState:
    """Bookkeeping for the acquisition loop.

    ``pool_indices`` index the low-fidelity dataset; chosen indices leave the
    pool for good.
    """

    pool_indices: np.ndarray
    eta: float = 0.0
    max_iters: int = 2
    batch_sizes: tuple = (5, 5)
    history: list = field(default_factory=list)

    def __post_init__(self):
        self.pool_indices = np.array(self.pool_indices, dtype=np.int64)
        self.batch_sizes = tuple(int(b) for b in self.batch_sizes)

    def batch_size(self, iteration: int) -> int:
        return self.batch_sizes[iteration] if iteration < len(self.batch_sizes) else self.batch_sizes[-1]

    def take(self, positions) -> np.ndarray:
        """Remove the given pool positions; returns their low-fidelity indices."""
        positions = np.asarray(positions, dtype=np.int64)
        chosen = self.pool_indices[positions]
        self.pool_indices = np.delete(self.pool_indices, positions)
        return chosen

    def record(self, iteration: int, chosen, error: float, n_high: int) -> None:
        self.history.append(AcquisitionRecord(iteration, [int(c) for c in chosen], float(error), n_high))

    def to_manifest(self) -> list:
        return [vars(r) for r in self.history]


def predictive_variance(model, X, n_mc: int = DEFAULT_N_MC, seed: int = 0) -> np.ndarray:
    if isinstance(model, NARGPModel):
        return predict_nargp(model, X, n_mc=n_mc, seed=seed)[1]
    if isinstance(model, GPModel):
        return predict(model, X)[1]
    raise TypeError(f"unsupported model type {type(model).__name__}")


def top_k(values, k: int) -> np.ndarray:
    """Indices of the k largest values; ties go to the lowest index."""
    return np.argsort(-np.asarray(values, dtype=float), kind="stable")[:k]


def acquire(model, pool_X, k: int, n_mc: int = DEFAULT_N_MC, seed: int = 0) -> np.ndarray:
    """Positions in ``pool_X`` of the k largest predictive variances (one pass, no refit)."""
    pool_X = np.asarray(pool_X, dtype=float)
    if pool_X.size == 0 or pool_X.shape[0] == 0:
        raise EmptyPool("no candidates left in the pool")
    pool_X = as_finite_matrix(pool_X, "pool_X")
    if not 1 <= k <= pool_X.shape[0]:
        raise ValueError(f"batch size {k} not in [1, {pool_X.shape[0]}]")
    return top_k(predictive_variance(model, pool_X, n_mc, seed), k)


def should_stop(test_relative_error: float, state: AcquisitionState, iteration: int) -> bool:
    return bool(test_relative_error < state.eta or iteration >= state.max_iters)
