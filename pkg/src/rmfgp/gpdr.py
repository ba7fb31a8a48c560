"""GP regression through a learned linear projection of the inputs.

The kernel is ``k_s(x, x') = k_d(W^T x, W^T x')`` with ``k_d`` an ARD squared
exponential on the projected coordinates.  ``W`` (s x d) is optimized jointly
with the inner kernel, then by alternating blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import as_finite_matrix, make_rng
from .errors import DimensionMismatch
from .gp import (
    ArdKernel,
    ArdKernelParams,
    GPConfig,
    GPModel,
    PARAM_BOUNDS,
    _ard,
    _input_scale,
    _lml_and_grad,
    _normalization,
    fit_gp,
    kernel_eval,
    optimize_theta,
)
from .sdr import orthonormalize

DEFAULT_ALTERNATIONS = 5
JOINT_MAXITER = 200
JOINT_RESTARTS = 10


@dataclass(frozen=True)
class ProjectedKernelParams:
    W: np.ndarray
    inner: ArdKernelParams

    def __post_init__(self):
        W = np.array(self.W, dtype=float, copy=True)
        if W.ndim != 2 or not np.all(np.isfinite(W)):
            raise ValueError("W must be a finite 2-D matrix")
        if W.shape[1] != self.inner.dim:
            raise DimensionMismatch(f"W has {W.shape[1]} columns, inner kernel has {self.inner.dim}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)


def projected_kernel_eval(params: ProjectedKernelParams, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape[0] != params.W.shape[0] or x2.shape[0] != params.W.shape[0]:
        raise DimensionMismatch(f"inputs must have {params.W.shape[0]} entries")
    return kernel_eval(params.inner, params.W.T @ x, params.W.T @ x2)


class ProjectedKernel:
    """theta = [vec(W) row-major (s*d), log sf2, log l_1..l_d]."""

    name = "projected_ard_se"

    def __init__(self, s: int, d: int):
        self.s = int(s)
        self.d = int(d)

    @property
    def n_params(self) -> int:
        return self.s * self.d + self.d + 1

    @property
    def n_projection(self) -> int:
        return self.s * self.d

    def split(self, theta):
        k = self.n_projection
        return theta[:k].reshape(self.s, self.d), theta[k:]

    def pack(self, W, inner_theta) -> np.ndarray:
        return np.concatenate([np.asarray(W, float).ravel(), inner_theta])

    def bounds(self, box=PARAM_BOUNDS) -> list[tuple]:
        lo, hi = np.log(box)
        return [(None, None)] * self.n_projection + [(lo, hi)] * (self.d + 1)

    def matrix(self, theta, X, X2=None):
        W, inner = self.split(theta)
        X2 = X if X2 is None else X2
        return _ard(inner, X @ W, X2 @ W)

    def diag(self, theta, X):
        return np.full(X.shape[0], math.exp(theta[self.n_projection]))

    def matrix_and_grads(self, theta, X):
        W, inner = self.split(theta)
        ls2 = np.exp(2.0 * inner[1:])
        U = X @ W
        dU = U.T[:, :, None] - U.T[:, None, :]
        D = dU ** 2 / ls2[:, None, None]
        K = math.exp(inner[0]) * np.exp(-0.5 * D.sum(0))
        dX = X.T[:, :, None] - X.T[:, None, :]
        gW = -(K[None, None] * (dU / ls2[:, None, None])[None] * dX[:, None])
        grads = np.concatenate([
            gW.reshape(self.n_projection, *K.shape),
            K[None],
            K[None] * D,
        ])
        return K, grads

    def describe(self, theta) -> dict:
        W, inner = self.split(theta)
        return {
            "W": W.tolist(),
            "signal_variance": float(math.exp(inner[0])),
            "lengthscales": [float(v) for v in np.exp(inner[1:])],
        }


@dataclass(frozen=True)
class ProjectedGPResult:
    W: np.ndarray  # orthonormalized s x d
    W_raw: np.ndarray
    inner: ArdKernelParams
    model: GPModel  # refit on X @ W
    lml_trace: np.ndarray
    extra_parameters: int

    def to_manifest(self) -> dict:
        return {
            "W": self.W.tolist(),
            "W_raw": self.W_raw.tolist(),
            "inner": {"signal_variance": float(self.inner.signal_variance),
                      "lengthscales": self.inner.lengthscales.tolist(),
                      "noise_variance": float(self.inner.noise_variance)},
            "lml_trace": self.lml_trace.tolist(),
            "extra_parameters": self.extra_parameters,
            "surrogate": self.model.to_manifest(),
        }


@dataclass(frozen=True)
class GPDRConfig:
    alternations: int = DEFAULT_ALTERNATIONS
    joint_maxiter: int = JOINT_MAXITER
    joint_restarts: int = JOINT_RESTARTS
    seed: int = 0
    gp: GPConfig = field(default_factory=GPConfig)


def fit_projected_gp(X, y, d: int, A0: Optional[np.ndarray] = None,
                     theta0: Optional[np.ndarray] = None, N: Optional[int] = None,
                     config: Optional[GPDRConfig] = None) -> ProjectedGPResult:
    """Learn an s x d projection by marginal likelihood.

    A short joint ascent over (W, phi) from ``A0`` is followed by ``N`` rounds
    of phi-only then W-only ascent.  Every phase starts at the previous phase's
    result and keeps the best point it evaluates, so ``lml_trace`` is
    non-decreasing.  ``theta0`` is ``[log sf2, log l_1..l_d]``.
    """
    config = config or GPDRConfig()
    N = config.alternations if N is None else N
    X = as_finite_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    n, s = X.shape
    if not 1 <= d <= s:
        raise DimensionMismatch(f"need 1 <= d <= s, got d={d}, s={s}")
    if s > n:
        raise ValueError(f"need s <= n, got s={s}, n={n}")
    if N < 1:
        raise ValueError("N must be >= 1")
    A0 = np.eye(s)[:, :d] if A0 is None else as_finite_matrix(A0, "A0")
    if A0.shape != (s, d):
        raise DimensionMismatch(f"A0 must be {s} x {d}, got {A0.shape}")

    gp_cfg = config.gp
    kernel = ProjectedKernel(s, d)
    offset, scale = _normalization(y, gp_cfg.normalize)
    yn = (y - offset) / scale
    learn_noise = gp_cfg.noise == "learn"
    fixed_noise = 0.0 if learn_noise else float(gp_cfg.noise)
    bounds = kernel.bounds(gp_cfg.bounds)
    if learn_noise:
        bounds = bounds + [(math.log(gp_cfg.noise_floor), math.log(gp_cfg.bounds[1]))]

    def start_from(W):
        inner = ArdKernel(d).initial_theta(X @ W) if theta0 is None else np.asarray(theta0, float)
        t = kernel.pack(W, inner)
        return np.append(t, math.log(1e-6)) if learn_noise else t

    def lml_at(t):
        nk = kernel.n_params
        noise = math.exp(t[nk]) if learn_noise else fixed_noise
        return _lml_and_grad(kernel, t[:nk], noise, X, yn, want_grad=False)[0]

    starts = [start_from(A0)]
    for r in range(1, max(1, config.joint_restarts)):
        W = make_rng([config.seed, r]).standard_normal((s, d))
        W = orthonormalize(W) * np.sqrt(np.mean(np.sum(A0 ** 2, axis=0)))
        starts.append(start_from(W))

    trace = [lml_at(starts[0])]
    theta, value, _ = optimize_theta(kernel, X, yn, starts, bounds, learn_noise=learn_noise,
                                     fixed_noise=fixed_noise, maxiter=config.joint_maxiter)
    if value < trace[0]:
        theta, value = starts[0], trace[0]
    trace.append(value)

    n_total = len(bounds)
    w_idx = np.arange(kernel.n_projection)
    phi_idx = np.arange(kernel.n_projection, n_total)
    for _ in range(N):
        for free in (phi_idx, w_idx):
            cand, cand_value, _ = optimize_theta(kernel, X, yn, [theta], bounds, free=free,
                                                 learn_noise=learn_noise,
                                                 fixed_noise=fixed_noise, maxiter=gp_cfg.maxiter)
            if cand is not None and cand_value >= value:
                theta, value = cand, cand_value
            trace.append(value)

    W_raw, inner_t = kernel.split(theta[: kernel.n_params])
    noise = math.exp(theta[kernel.n_params]) if learn_noise else fixed_noise
    W = orthonormalize(W_raw)
    model = fit_gp(X @ W, y, gp_cfg)
    inner = ArdKernelParams(math.exp(inner_t[0]), np.exp(inner_t[1:]), noise * scale ** 2)
    return ProjectedGPResult(W, W_raw.copy(), inner, model, np.array(trace), kernel.n_projection)
