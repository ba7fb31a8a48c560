"""Rotated multi-fidelity GP: rotation loop, acquisition and reduced surrogate.

The loop fits a NARGP model on rotated inputs, re-estimates a rotation from
its test predictions, and grows the high-fidelity set by predictive variance.
The accumulated rotation then either feeds a full-dimensional GP (flag 0) or
is truncated to ``s`` columns and refined to ``d`` directions by the
projected-kernel GP (flag 1).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from .active import AcquisitionState, acquire, should_stop
from .benchmarks import relative_error
from .data import Dataset, Fidelity, as_finite_matrix
from .errors import DimensionMismatch, DimensionOrder, NotOrthogonal
from .gp import GPConfig, GPModel, fit_gp, predict
from .gpdr import GPDRConfig, ProjectedGPResult, fit_projected_gp
from .multifidelity import MFConfig, NARGPModel, fit_nargp, nested_positions, predict_nargp
from .sdr import SdrResult, bic_from_sdr, default_slice_count, orthonormalize, save, sir

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-8
ESTIMATORS = {"save": save, "sir": sir}


@dataclass(frozen=True)
class RmfgpConfig:
    """Pipeline settings.

    ``max_iters`` defaults to the number of batches.  ``d`` overrides the
    BIC choice of the reduced dimension.  ``identity_rotations`` replaces
    every estimated rotation by the identity (used to test the plumbing).
    """

    flag: int = 1
    s: int = 3
    H: int = 10
    batch_sizes: tuple = (5, 5)
    max_iters: Optional[int] = None
    eta: float = 0.0
    n_mc: int = 100
    seed: int = 0
    alternations: int = 5
    d: Optional[int] = None
    estimator: str = "save"
    low_restarts: int = 3
    high_restarts: int = 5
    surrogate_restarts: int = 5
    surrogate_noise: Union[str, float] = "learn"
    identity_rotations: bool = False

    def __post_init__(self):
        if self.flag not in (0, 1):
            raise ValueError("flag must be 0 or 1")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {sorted(ESTIMATORS)}")
        if not self.batch_sizes or any(int(b) < 1 for b in self.batch_sizes):
            raise ValueError("batch_sizes must be positive")

    @property
    def iterations(self) -> int:
        return len(self.batch_sizes) if self.max_iters is None else int(self.max_iters)

    def surrogate_gp(self) -> GPConfig:
        return GPConfig(restarts=self.surrogate_restarts, seed=self.seed,
                        noise=self.surrogate_noise)


def check_orthogonal(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise NotOrthogonal(f"rotation must be square, got shape {R.shape}")
    err = float(np.linalg.norm(R.T @ R - np.eye(R.shape[0])))
    if err > tol:
        raise NotOrthogonal(f"||R^T R - I||_F = {err:.3g} exceeds {tol:g}")


def rotate_inputs(X, R) -> np.ndarray:
    """Right-multiply the rows of X by the orthogonal matrix R."""
    X = as_finite_matrix(X)
    check_orthogonal(R)
    if X.shape[1] != R.shape[0]:
        raise DimensionMismatch(f"X has {X.shape[1]} columns, rotation is {R.shape[0]} x {R.shape[0]}")
    return X @ R


@dataclass(frozen=True)
class ReducedSurrogate:
    """A GP on ``X @ transform`` that takes original-coordinate queries."""

    transform: np.ndarray
    model: GPModel

    @property
    def input_dim(self) -> int:
        return self.transform.shape[0]

    def predict(self, X):
        X = as_finite_matrix(X, "Xstar")
        if X.shape[1] != self.input_dim:
            raise DimensionMismatch(f"query has {X.shape[1]} columns, expected {self.input_dim}")
        return predict(self.model, X @ self.transform)

    def to_manifest(self) -> dict:
        return {"transform": self.transform.tolist(), "gp": self.model.to_manifest()}


@dataclass(frozen=True)
class LoopOutcome:
    """State after the acquisition loop, shared by both terminal flags."""

    A_T: np.ndarray
    A_hats: tuple
    M1: np.ndarray
    final_sdr: SdrResult
    final_high: Dataset
    final_model: NARGPModel
    history: list
    n_test: int
    config: RmfgpConfig


@dataclass(frozen=True)
class RmfgpResult:
    A_T: np.ndarray
    A_hats: tuple
    M1: np.ndarray
    M1_hat: Optional[np.ndarray]
    M2: Optional[np.ndarray]
    M: np.ndarray
    d_hat: Optional[int]
    G: Optional[np.ndarray]
    surrogate: ReducedSurrogate
    final_high: Dataset
    history: list
    flag: int
    projected: Optional[ProjectedGPResult] = field(default=None, compare=False)

    def predict(self, X):
        return self.surrogate.predict(X)

    def subspace(self, d: int) -> np.ndarray:
        """Leading ``d`` directions of the estimated reduction."""
        return self.M[:, :d]

    def to_manifest(self) -> dict:
        out = {
            "flag": self.flag,
            "A_T": self.A_T.tolist(),
            "A_hats": [A.tolist() for A in self.A_hats],
            "M1": self.M1.tolist(),
            "M": self.M.tolist(),
            "d_hat": self.d_hat,
            "G": None if self.G is None else self.G.tolist(),
            "n_high": self.final_high.n,
            "high_indices": self.final_high.source_indices.tolist(),
            "history": self.history,
            "surrogate": self.surrogate.to_manifest(),
        }
        if self.flag == 1:
            out["M1_hat"] = self.M1_hat.tolist()
            out["M2"] = self.M2.tolist()
            out["gpdr"] = {"lml_trace": self.projected.lml_trace.tolist(),
                           "extra_parameters": self.projected.extra_parameters}
        return out


def _rotation(X, y, config: RmfgpConfig) -> SdrResult:
    H = default_slice_count(X.shape[0], config.H)
    res = ESTIMATORS[config.estimator](X, y, H)
    if config.identity_rotations:
        p = X.shape[1]
        res = replace(res, rotation=np.eye(p), directions=np.eye(p))
    return res


def _high_indices(low: Dataset, high: Dataset) -> np.ndarray:
    pos = nested_positions(low.X, high.X)
    if high.source_indices is not None and not np.array_equal(pos, high.source_indices):
        raise ValueError("high.source_indices disagree with the row positions in low")
    return pos


def run_loop(low: Dataset, high: Dataset, test: Dataset, config: RmfgpConfig,
             high_eval: Callable) -> LoopOutcome:
    """Rotation plus acquisition loop.

    Each pass fits NARGP on inputs rotated by the running product ``M1``,
    predicts the test inputs, estimates ``A_hat`` from those predictions and
    records the test error.  Unless the stopping rule fires, the pool points
    with the largest predictive variance are labelled by ``high_eval`` and
    added.  ``M1`` is then multiplied by ``A_hat``.
    """
    if not low.p == high.p == test.p:
        raise DimensionMismatch("low, high and test inputs differ in dimension")
    if high.n < 3:
        raise ValueError("need at least three high-fidelity points")
    idx = list(_high_indices(low, high))
    y_high = list(high.y)

    A_T = _rotation(low.X, low.y, config).rotation
    check_orthogonal(A_T)
    M1 = A_T.copy()
    state = AcquisitionState(
        np.setdiff1d(np.arange(low.n), idx), eta=config.eta,
        max_iters=config.iterations, batch_sizes=config.batch_sizes,
    )
    mf = MFConfig(low=GPConfig(restarts=config.low_restarts, seed=config.seed),
                  high=GPConfig(restarts=config.high_restarts, seed=config.seed))
    A_hats = []
    it = 0
    while True:
        high_ds = Dataset(low.X[idx] @ M1, np.array(y_high), Fidelity.HIGH)
        model = fit_nargp(Dataset(low.X @ M1, low.y, Fidelity.LOW), high_ds, mf)
        mu_T = predict_nargp(model, test.X @ M1, config.n_mc, config.seed)[0]
        err = relative_error(test.y, mu_T)
        sdr = _rotation(test.X @ M1, mu_T, config)
        stop = should_stop(err, state, it)
        chosen = []
        if not stop:
            k = min(state.batch_size(it), state.pool_indices.size)
            positions = acquire(model, low.X[state.pool_indices] @ M1, k, config.n_mc, config.seed)
            chosen = state.take(positions)
            idx.extend(int(c) for c in chosen)
            y_high.extend(np.asarray(high_eval(low.X[chosen]), dtype=float))
        state.record(it, chosen, err, len(idx))
        logger.info("iteration %d: test error %.4g, n_high %d", it, err, len(idx))
        A_hats.append(sdr.rotation)
        M1 = M1 @ sdr.rotation
        check_orthogonal(M1)
        it += 1
        if stop:
            break

    final_high = Dataset(low.X[idx], np.array(y_high), Fidelity.HIGH,
                         source_indices=np.array(idx, dtype=np.int64))
    return LoopOutcome(A_T, tuple(A_hats), M1, sdr, final_high, model,
                       state.to_manifest(), test.n, config)


def build_final_surrogate(transform: np.ndarray, train_high: Dataset,
                          config: RmfgpConfig) -> ReducedSurrogate:
    """GP on the transformed high-fidelity inputs (high-fidelity data only)."""
    transform = np.asarray(transform, dtype=float)
    model = fit_gp(train_high.X @ transform, train_high.y, config.surrogate_gp())
    return ReducedSurrogate(transform, model)


def finalize(outcome: LoopOutcome, flag: Optional[int] = None,
             d: Optional[int] = None) -> RmfgpResult:
    """Turn a finished loop into the flag-0 or flag-1 surrogate."""
    config = outcome.config
    flag = config.flag if flag is None else flag
    d = config.d if d is None else d
    high = outcome.final_high
    p = high.p
    if flag == 0:
        sur = build_final_surrogate(outcome.M1, high, config)
        return RmfgpResult(outcome.A_T, outcome.A_hats, outcome.M1, None, None, outcome.M1,
                           None, None, sur, high, outcome.history, 0)

    d_bic, G = bic_from_sdr(outcome.final_sdr, outcome.n_test)
    d_hat = d_bic if d is None else int(d)
    s = config.s
    if not 1 <= d_hat < s < p:
        raise DimensionOrder(f"need d < s < p, got d={d_hat}, s={s}, p={p}")
    M1_hat = outcome.M1[:, :s]
    gcfg = GPDRConfig(alternations=config.alternations, seed=config.seed,
                      gp=GPConfig(restarts=config.surrogate_restarts, seed=config.seed))
    proj = fit_projected_gp(high.X @ M1_hat, high.y, d_hat, A0=np.eye(s)[:, :d_hat], config=gcfg)
    M = orthonormalize(M1_hat @ proj.W)
    sur = build_final_surrogate(M, high, config)
    return RmfgpResult(outcome.A_T, outcome.A_hats, outcome.M1, M1_hat, proj.W, M, d_hat, G,
                       sur, high, outcome.history, 1, proj)


def run_rmfgp(low: Dataset, high: Dataset, test: Dataset, config: RmfgpConfig,
              high_eval: Callable) -> RmfgpResult:
    """Full pipeline for ``config.flag``."""
    return finalize(run_loop(low, high, test, config, high_eval))
