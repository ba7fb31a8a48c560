"""Benchmark problems, the elliptic quadrature solver and error metrics.

Four test problems are provided: a linear pair, a nonlinear exponential pair,
stochastic linear advection, and a 1-D elliptic equation with a random
coefficient.  All evaluators take an ``(n, p)`` matrix and return ``n`` values.
A single ``p``-vector returns a scalar.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .data import as_finite_matrix, make_rng
from .errors import DimensionMismatch, NonPositiveCoefficient, ZeroNorm

FROM_LARGE_SAMPLE_SAVE = "from_large_sample_save"
GL_PANELS = 64
GL_ORDER = 8
_ROW_CHUNK = 4000


def _pointwise(fn):
    """Let a row-vectorized evaluator also accept a single p-vector."""

    @functools.wraps(fn)
    def wrapper(X):
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 1:
            return float(fn(arr[None, :])[0])
        return fn(arr)

    return wrapper


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    p: int
    low_eval: Callable
    high_eval: Callable
    true_subspace: Union[np.ndarray, str]
    true_d: Union[int, str]
    fixed_params: dict = field(default_factory=dict)
    family: Optional[Callable[[float], "BenchmarkProblem"]] = None

    def subspace(self, **kwargs) -> np.ndarray:
        """Basis of the true central subspace (estimated when tagged)."""
        if isinstance(self.true_subspace, str):
            return reference_reduction(self, **kwargs)[0]
        return self.true_subspace

    def dimension(self, **kwargs) -> int:
        if isinstance(self.true_d, str):
            return reference_reduction(self, **kwargs)[1]
        return self.true_d


# ---------------------------------------------------------------------------
# Closed-form problems
# ---------------------------------------------------------------------------

def linear_problem() -> BenchmarkProblem:
    """Six inputs; the high-fidelity response depends on x1 + x3 and x1 + x2."""

    @_pointwise
    def f_high(X):
        X = _check(X, 6)
        return np.sin(np.pi * (X[:, 0] + X[:, 2])) + np.sin(np.pi * (X[:, 0] + X[:, 1])) + 2.0

    @_pointwise
    def f_low(X):
        X = _check(X, 6)
        return f_high(X) + X[:, 2] * X[:, 3] * X[:, 4] * X[:, 5]

    A = np.array([[1, 0, 1, 0, 0, 0], [1, 1, 0, 0, 0, 0]], dtype=float).T
    return BenchmarkProblem("linear", 6, f_low, f_high, A, 2)


def nonlinear_problem() -> BenchmarkProblem:
    """Ten inputs; high = exp(0.2 sum x), low = x4 * high."""

    @_pointwise
    def f_high(X):
        X = _check(X, 10)
        return np.exp(0.2 * X.sum(axis=1))

    @_pointwise
    def f_low(X):
        X = _check(X, 10)
        return X[:, 3] * f_high(X)

    return BenchmarkProblem("nonlinear", 10, f_low, f_high, np.ones((10, 1)), 1)


def advection_solution(xi, x: float, t: float, a: float, first: int = 0) -> np.ndarray:
    """Exact transport of sin(pi (x + 1)) + 1 with speed (a / 4) * sum(xi[first:])."""
    speed = 0.25 * a * xi[:, first:].sum(axis=1)
    return np.sin(np.pi * (x - speed * t + 1.0)) + 1.0


def advection_problem(a: float = 1.0, x: float = 0.5, t: float = 1.0) -> BenchmarkProblem:
    """Five random inputs; the low model drops xi_1 and xi_2 from the speed."""

    @_pointwise
    def u_high(XI):
        return advection_solution(_check(XI, 5), x, t, a)

    @_pointwise
    def u_low(XI):
        return advection_solution(_check(XI, 5), x, t, a, first=2)

    return BenchmarkProblem(
        "advection", 5, u_low, u_high, np.ones((5, 1)), 1,
        fixed_params={"a": a, "x": x, "t": t},
        family=lambda xv: advection_problem(a, xv, t),
    )


def _check(X, p):
    if X.shape[1] != p:
        raise DimensionMismatch(f"expected {p} inputs, got {X.shape[1]}")
    return X


# ---------------------------------------------------------------------------
# Elliptic problem
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def gauss_legendre_nodes(lo: float, hi: float, panels: int = GL_PANELS, order: int = GL_ORDER):
    """Nodes and weights of composite Gauss-Legendre on [lo, hi]."""
    t, w = leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * t).ravel()
    weights = (half[:, None] * w).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _solve_with_inverse(inv_a: Callable, x_query: float, panels: int, order: int) -> np.ndarray:
    """u(x_query) for -(a u')' = 1, u(0) = u(1) = 0, given a vectorized 1/a.

    ``inv_a(y)`` maps node vector y (k,) to an (m, k) array, one row per
    coefficient realization.
    """
    y, w = gauss_legendre_nodes(0.0, 1.0, panels, order)
    inv = inv_a(y)
    if np.any(inv <= 0) or not np.all(np.isfinite(inv)):
        raise NonPositiveCoefficient("coefficient a(y) must be positive and finite on [0, 1]")
    flux0 = (inv * (y * w)).sum(axis=1) / (inv @ w)
    if x_query <= 0.0:
        return np.zeros(inv.shape[0])
    yq, wq = gauss_legendre_nodes(0.0, float(x_query), panels, order)
    invq = inv_a(yq)
    if np.any(invq <= 0) or not np.all(np.isfinite(invq)):
        raise NonPositiveCoefficient("coefficient a(y) must be positive and finite on [0, 1]")
    return ((flux0[:, None] - yq[None, :]) * invq) @ wq


def solve_elliptic(a: Callable, x_query: float, panels: int = GL_PANELS,
                   order: int = GL_ORDER) -> float:
    """Evaluate u(x_query) from the integral form of the solution.

    u(x) = int_0^x (F - y) / a(y) dy with F = int_0^1 y/a / int_0^1 1/a,
    all integrals by composite Gauss-Legendre quadrature.
    """
    if not 0.0 <= x_query <= 1.0:
        raise ValueError("x_query must lie in [0, 1]")

    def inv_a(y):
        vals = np.asarray(a(y), dtype=float) * np.ones_like(y)
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            raise NonPositiveCoefficient("coefficient a(y) must be positive and finite on [0, 1]")
        return (1.0 / vals)[None, :]

    return float(_solve_with_inverse(inv_a, x_query, panels, order)[0])


def elliptic_coefficient(xi, high: bool = True) -> Callable:
    """a(y; xi) for a single 6-vector xi."""
    xi = np.asarray(xi, dtype=float).ravel()
    shift = xi[0] if high else 0.1
    total = xi[:4].sum()
    return lambda y: 1.0 / (shift + np.sin(np.asarray(y) * total) + 1.0)


def elliptic_solution(XI, x_query: float, high: bool = True, panels: int = GL_PANELS,
                      order: int = GL_ORDER) -> np.ndarray:
    """Vectorized u(x_query; xi) over rows of XI."""
    XI = _check(as_finite_matrix(XI, "xi"), 6)
    out = np.empty(XI.shape[0])
    for start in range(0, XI.shape[0], _ROW_CHUNK):
        block = XI[start:start + _ROW_CHUNK]
        shift = block[:, 0] if high else np.full(block.shape[0], 0.1)
        total = block[:, :4].sum(axis=1)

        def inv_a(y, shift=shift, total=total):
            return shift[:, None] + np.sin(y[None, :] * total[:, None]) + 1.0

        out[start:start + block.shape[0]] = _solve_with_inverse(inv_a, x_query, panels, order)
    return out


def elliptic_problem(x_query: float = 0.7) -> BenchmarkProblem:
    """Six random inputs; only xi_1..xi_4 enter the coefficient."""

    @_pointwise
    def u_high(XI):
        return elliptic_solution(XI, x_query, high=True)

    @_pointwise
    def u_low(XI):
        return elliptic_solution(XI, x_query, high=False)

    return BenchmarkProblem(
        "elliptic", 6, u_low, u_high, FROM_LARGE_SAMPLE_SAVE, FROM_LARGE_SAMPLE_SAVE,
        fixed_params={"x": x_query},
        family=elliptic_problem,
    )


PROBLEMS = {
    "linear": linear_problem,
    "nonlinear": nonlinear_problem,
    "advection": advection_problem,
    "elliptic": elliptic_problem,
}


def get_problem(name: str) -> BenchmarkProblem:
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None


REFERENCE_SAMPLES = 10000
REFERENCE_SEED = 20240101


@functools.lru_cache(maxsize=8)
def _reference_cached(name: str, params: tuple, n: int, seed: int, H: int):
    from .sdr import bic_from_sdr, save

    problem = PROBLEMS[name](**dict(params))
    X = make_rng(seed).random((n, problem.p))
    res = save(X, problem.high_eval(X), H)
    d, G = bic_from_sdr(res, n)
    return res.basis(d), d, G, res


def reference_reduction(problem: BenchmarkProblem, n: int = REFERENCE_SAMPLES,
                        seed: int = REFERENCE_SEED, H: int = 10):
    """(basis, d, G, SdrResult) from SAVE plus BIC on n exact high-fidelity samples."""
    params = tuple(sorted(problem.fixed_params.items()))
    if problem.name == "elliptic":
        params = (("x_query", problem.fixed_params["x"]),)
    return _reference_cached(problem.name, params, n, seed, H)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def relative_error(u, u_hat) -> float:
    """||u - u_hat||_2 / ||u||_2."""
    u = np.asarray(u, dtype=float).ravel()
    u_hat = np.asarray(u_hat, dtype=float).ravel()
    if u.shape != u_hat.shape:
        raise DimensionMismatch(f"lengths differ: {u.shape[0]} vs {u_hat.shape[0]}")
    norm = float(np.linalg.norm(u))
    if norm == 0.0:
        raise ZeroNorm("exact values have zero norm")
    return float(np.linalg.norm(u - u_hat)) / norm


def mean_squared_error(u, u_hat) -> float:
    u = np.asarray(u, dtype=float).ravel()
    return float(np.mean((u - np.asarray(u_hat, dtype=float).ravel()) ** 2))


# ---------------------------------------------------------------------------
# Uncertainty propagation over a spatial grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedSurrogateSpec:
    """A reduction matrix plus the high-fidelity inputs its GP is trained on."""

    transform: np.ndarray  # p x q
    train_X: np.ndarray


@dataclass(frozen=True)
class UPCurves:
    x: np.ndarray
    mean_truth: np.ndarray
    std_truth: np.ndarray
    mean: dict  # method -> (n_grid,)
    std: dict  # spread of the surrogate mean across draws
    predictive_std: dict  # draw-average of the GP posterior standard deviation

    def l2_distance(self, method: str) -> float:
        return float(np.linalg.norm(self.mean[method] - self.mean_truth))


def truth_curves(problem: BenchmarkProblem, x_grid, n_draws: int, seed):
    XI = make_rng(seed).random((n_draws, problem.p))
    means, stds = [], []
    for xv in x_grid:
        u = problem.family(float(xv)).high_eval(XI)
        means.append(u.mean())
        stds.append(u.std(ddof=1))
    return np.array(means), np.array(stds)


def uncertainty_propagation(problem: BenchmarkProblem, surrogates: dict, x_grid=None,
                            n_xi: int = 2000, seed: int = 0, n_truth: int = 100000,
                            gp_config=None) -> UPCurves:
    """Mean/std curves over x for each reduced surrogate and for the exact model.

    For every x the surrogate GP is refit on its fixed training inputs with
    responses from the exact model at that x, then evaluated at ``n_xi``
    common input draws.
    """
    from .gp import GPConfig, fit_gp, predict

    if problem.family is None:
        raise ValueError(f"problem {problem.name!r} has no spatial family")
    x_grid = np.linspace(0.0, 1.0, 50) if x_grid is None else np.asarray(x_grid, dtype=float)
    gp_config = gp_config or GPConfig(restarts=3, seed=seed)
    draws = make_rng([seed, 1]).random((n_xi, problem.p))
    mean_truth, std_truth = truth_curves(problem, x_grid, n_truth, [seed, 2])
    mean, std, pstd = {}, {}, {}
    for name, spec in surrogates.items():
        mu_c, sd_c, ps_c = [], [], []
        Z_train = spec.train_X @ spec.transform
        Z_draw = draws @ spec.transform
        for xv in x_grid:
            member = problem.family(float(xv))
            model = fit_gp(Z_train, member.high_eval(spec.train_X), gp_config)
            mu, var = predict(model, Z_draw)
            mu_c.append(mu.mean())
            sd_c.append(mu.std(ddof=1))
            ps_c.append(np.sqrt(var).mean())
        mean[name], std[name], pstd[name] = np.array(mu_c), np.array(sd_c), np.array(ps_c)
    return UPCurves(x_grid, mean_truth, std_truth, mean, std, pstd)
