"""Two-level multi-fidelity GP fusion.

Two schemes are provided.  The recursive linear auto-regressive scheme
(high = rho * low + delta) serves as a baseline.  The nonlinear scheme trains a
second GP on inputs augmented with the low-fidelity posterior mean.  Its
predictive moments are found by Monte Carlo over the low-fidelity posterior.

Only two levels are handled.  A third level would reuse ``fit_nargp`` with the
two-level model standing in for ``gp_low`` (its Monte Carlo predictive mean
supplies the augmented coordinate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, as_finite_matrix, make_rng
from .errors import DimensionMismatch, NotNested
from .gp import GPConfig, GPModel, NargpKernel, fit_gp, predict, predict_normalized

DEFAULT_N_MC = 100
_CHUNK_ROWS = 20000


@dataclass(frozen=True)
class MFConfig:
    low: GPConfig = field(default_factory=GPConfig)
    high: GPConfig = field(default_factory=GPConfig)


def _row_index(X: np.ndarray) -> dict:
    return {row.tobytes(): i for i, row in enumerate(np.ascontiguousarray(X))}


def nested_positions(low_X: np.ndarray, high_X: np.ndarray) -> np.ndarray:
    """Row position of every high input inside the low inputs (exact match)."""
    lookup = _row_index(np.asarray(low_X, dtype=float))
    pos = []
    for i, row in enumerate(np.ascontiguousarray(np.asarray(high_X, dtype=float))):
        j = lookup.get(row.tobytes())
        if j is None:
            raise NotNested(f"high-fidelity input row {i} is not among the low-fidelity inputs")
        pos.append(j)
    return np.array(pos, dtype=np.int64)


# ---------------------------------------------------------------------------
# Linear auto-regressive baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearARModel:
    gp_low: GPModel
    rho: float
    delta_mean: float
    gp_delta: GPModel


def fit_linear_ar(low: Dataset, high: Dataset, config: MFConfig | None = None) -> LinearARModel:
    """Recursive co-kriging: rho and the discrepancy mean by least squares,
    then a GP on the residual discrepancy at the nested high inputs."""
    config = config or MFConfig()
    if low.p != high.p:
        raise DimensionMismatch("low and high inputs differ in dimension")
    if high.n < 3:
        raise ValueError("linear AR needs at least three high-fidelity points")
    nested_positions(low.X, high.X)
    gp_low = fit_gp(low.X, low.y, config.low)
    mu_low, _ = predict(gp_low, high.X)
    design = np.column_stack([mu_low, np.ones(high.n)])
    (rho, delta_mean), *_ = np.linalg.lstsq(design, high.y, rcond=None)
    resid = high.y - rho * mu_low - delta_mean
    gp_delta = fit_gp(high.X, resid, config.high)
    return LinearARModel(gp_low, float(rho), float(delta_mean), gp_delta)


def predict_linear_ar(model: LinearARModel, Xstar):
    mu_low, var_low = predict(model.gp_low, Xstar)
    mu_d, var_d = predict(model.gp_delta, Xstar)
    mean = model.rho * mu_low + model.delta_mean + mu_d
    return mean, model.rho ** 2 * var_low + var_d


# ---------------------------------------------------------------------------
# Nonlinear auto-regressive scheme
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NARGPModel:
    gp_low: GPModel
    gp_high: GPModel

    @property
    def input_dim(self) -> int:
        return self.gp_low.input_dim

    @property
    def kernel_parts(self) -> dict:
        return self.gp_high.kernel.component_params(self.gp_high.theta)

    def to_manifest(self) -> dict:
        return {"low": self.gp_low.to_manifest(), "high": self.gp_high.to_manifest()}


def augment(X: np.ndarray, z: np.ndarray) -> np.ndarray:
    return np.column_stack([X, z])


def fit_nargp(low: Dataset, high: Dataset, config: MFConfig | None = None) -> NARGPModel:
    """Fit the low-level GP, then a composite-kernel GP on [x, mu_low(x)]."""
    config = config or MFConfig()
    if low.p != high.p:
        raise DimensionMismatch("low and high inputs differ in dimension")
    if high.n < 3:
        raise ValueError("NARGP needs at least three high-fidelity points")
    gp_low = fit_gp(low.X, low.y, config.low)
    mu_low, _ = predict(gp_low, high.X)
    gp_high = fit_gp(augment(high.X, mu_low), high.y, config.high, kernel=NargpKernel(high.p))
    return NARGPModel(gp_low, gp_high)


def low_fidelity_samples(model: NARGPModel, Xstar: np.ndarray, n_mc: int, seed) -> np.ndarray:
    """(m, n_mc) draws from the low-level posterior; row i uses stream (seed, i)."""
    mu, var = predict(model.gp_low, Xstar)
    sd = np.sqrt(var)
    eps = np.empty((Xstar.shape[0], n_mc))
    for i in range(Xstar.shape[0]):
        eps[i] = make_rng([int(seed), i]).standard_normal(n_mc)
    return mu[:, None] + sd[:, None] * eps


def predict_nargp(model: NARGPModel, Xstar, n_mc: int = DEFAULT_N_MC, seed: int = 0,
                  return_parts: bool = False):
    """Predictive mean and variance by the law of total variance over n_mc
    low-level posterior draws per query point."""
    Xstar = as_finite_matrix(Xstar, "Xstar")
    if Xstar.shape[1] != model.input_dim:
        raise DimensionMismatch(f"Xstar has {Xstar.shape[1]} columns, model expects {model.input_dim}")
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    m = Xstar.shape[0]
    Z = low_fidelity_samples(model, Xstar, n_mc, seed)
    rows = np.repeat(Xstar, n_mc, axis=0)
    z = Z.ravel()
    gp = model.gp_high
    cond_mean = np.empty(m * n_mc)
    cond_var = np.empty(m * n_mc)
    for start in range(0, m * n_mc, _CHUNK_ROWS):
        sl = slice(start, start + _CHUNK_ROWS)
        mu, var = predict_normalized(gp, augment(rows[sl], z[sl]))
        cond_mean[sl] = mu * gp.y_scale + gp.y_offset
        cond_var[sl] = np.maximum(var, 0.0) * gp.y_scale ** 2
    cond_mean = cond_mean.reshape(m, n_mc)
    cond_var = cond_var.reshape(m, n_mc)
    mean = cond_mean.mean(axis=1)
    expected_var = cond_var.mean(axis=1)
    var = expected_var + cond_mean.var(axis=1)
    if return_parts:
        return mean, var, expected_var
    return mean, var
