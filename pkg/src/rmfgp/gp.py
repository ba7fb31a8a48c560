"""Single-fidelity Gaussian process regression.

Kernels work on log-parameter vectors so that the marginal-likelihood
optimizer can run unconstrained-in-sign over box bounds.  Every kernel
exposes ``matrix``, ``diag`` and ``matrix_and_grads``; the last returns the
stack of partial derivatives of K with respect to each kernel parameter, which
is all the generic likelihood code needs.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .data import as_finite_matrix, make_rng
from .errors import DimensionMismatch, NotPositiveDefinite, OptimizerFailure

logger = logging.getLogger(__name__)

JITTER_LADDER = (1e-10, 1e-8, 1e-6, 1e-4)
PARAM_BOUNDS = (1e-6, 1e6)
NOISE_FLOOR = 1e-8
# random restarts: lengthscale factors of the input range, normalized noise
RANDOM_LS_RANGE = (0.03, 2.0)
RANDOM_NOISE_RANGE = (1e-3, 0.3)
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ArdKernelParams:
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        if not (self.signal_variance > 0 and np.all(ls > 0) and self.noise_variance >= 0):
            raise ValueError("kernel parameters must be positive (noise non-negative)")
        if not (np.isfinite(self.signal_variance) and np.all(np.isfinite(ls))
                and np.isfinite(self.noise_variance)):
            raise ValueError("kernel parameters must be finite")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]

    def log_theta(self) -> np.ndarray:
        return np.concatenate([[math.log(self.signal_variance)], np.log(self.lengthscales)])


def _scaled_diffs(X: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Per-dimension squared scaled differences, shape (dim, n, m)."""
    A = X / lengthscales
    B = X2 / lengthscales
    return (A.T[:, :, None] - B.T[:, None, :]) ** 2


def _ard(theta: np.ndarray, X: np.ndarray, X2: np.ndarray) -> np.ndarray:
    sf2 = math.exp(theta[0])
    ls = np.exp(theta[1:])
    A = X / ls
    B = X2 / ls
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return sf2 * np.exp(-0.5 * sq)


def _ard_with_grads(theta: np.ndarray, X: np.ndarray):
    ls = np.exp(theta[1:])
    D = _scaled_diffs(X, X, ls)
    K = math.exp(theta[0]) * np.exp(-0.5 * D.sum(0))
    grads = np.empty((theta.shape[0],) + K.shape)
    grads[0] = K
    grads[1:] = K[None] * D
    return K, grads


class ArdKernel:
    """ARD squared exponential; theta = [log sf2, log l_1, ..., log l_dim]."""

    name = "ard_se"

    def __init__(self, dim: int):
        self.dim = int(dim)

    @property
    def n_params(self) -> int:
        return self.dim + 1

    def param_names(self) -> list[str]:
        return ["log_signal_variance"] + [f"log_lengthscale_{j}" for j in range(self.dim)]

    def bounds(self, box=PARAM_BOUNDS) -> list[tuple]:
        lo, hi = np.log(box)
        return [(lo, hi)] * self.n_params

    def matrix(self, theta, X, X2=None) -> np.ndarray:
        return _ard(theta, X, X if X2 is None else X2)

    def diag(self, theta, X) -> np.ndarray:
        return np.full(X.shape[0], math.exp(theta[0]))

    def matrix_and_grads(self, theta, X):
        return _ard_with_grads(theta, X)

    def initial_theta(self, X) -> np.ndarray:
        return np.concatenate([[0.0], np.log(_input_scale(X))])

    def random_theta(self, rng: np.random.Generator, X) -> np.ndarray:
        scale = _input_scale(X)
        return np.concatenate([
            [rng.uniform(math.log(0.2), math.log(5.0))],
            np.log(scale) + rng.uniform(math.log(RANDOM_LS_RANGE[0]), math.log(RANDOM_LS_RANGE[1]), size=self.dim),
        ])

    def describe(self, theta) -> dict:
        return {
            "signal_variance": float(math.exp(theta[0])),
            "lengthscales": [float(v) for v in np.exp(theta[1:])],
        }


def _input_scale(X) -> np.ndarray:
    span = np.ptp(X, axis=0) if X.shape[0] > 1 else np.ones(X.shape[1])
    return np.clip(span, 1e-3, None)


class NargpKernel:
    """Composite kernel k_rho(x, x') * k_z(z, z') + k_delta(x, x') on rows [x, z].

    theta = [rho: log sf2, log l (dim)] + [z: log l] + [delta: log sf2, log l (dim)].
    The z-factor has unit variance; its amplitude is carried by the rho factor.
    """

    name = "nargp_composite"

    def __init__(self, dim: int):
        self.dim = int(dim)

    @property
    def n_params(self) -> int:
        return 2 * self.dim + 3

    def _split(self, theta):
        p = self.dim
        return theta[: p + 1], np.array([0.0, theta[p + 1]]), theta[p + 2:]

    def param_names(self) -> list[str]:
        p = self.dim
        return (
            ["rho.log_signal_variance"] + [f"rho.log_lengthscale_{j}" for j in range(p)]
            + ["z.log_lengthscale"]
            + ["delta.log_signal_variance"] + [f"delta.log_lengthscale_{j}" for j in range(p)]
        )

    def bounds(self, box=PARAM_BOUNDS) -> list[tuple]:
        lo, hi = np.log(box)
        return [(lo, hi)] * self.n_params

    def matrix(self, theta, X, X2=None):
        X2 = X if X2 is None else X2
        t_rho, t_z, t_delta = self._split(theta)
        p = self.dim
        return (
            _ard(t_rho, X[:, :p], X2[:, :p]) * _ard(t_z, X[:, p:], X2[:, p:])
            + _ard(t_delta, X[:, :p], X2[:, :p])
        )

    def diag(self, theta, X):
        return np.full(X.shape[0], math.exp(theta[0]) + math.exp(theta[self.dim + 2]))

    def matrix_and_grads(self, theta, X):
        t_rho, t_z, t_delta = self._split(theta)
        p = self.dim
        K_rho, g_rho = _ard_with_grads(t_rho, X[:, :p])
        K_z, g_z = _ard_with_grads(t_z, X[:, p:])
        K_delta, g_delta = _ard_with_grads(t_delta, X[:, :p])
        grads = np.concatenate([g_rho * K_z[None], (K_rho * g_z[1])[None], g_delta])
        return K_rho * K_z + K_delta, grads

    def initial_theta(self, X) -> np.ndarray:
        p = self.dim
        sx = np.log(_input_scale(X[:, :p]))
        sz = np.log(_input_scale(X[:, p:]))
        return np.concatenate([[0.0], sx, sz, [math.log(0.01)], sx])

    def random_theta(self, rng, X) -> np.ndarray:
        p = self.dim
        sx = np.log(_input_scale(X[:, :p]))
        sz = np.log(_input_scale(X[:, p:]))
        return np.concatenate([
            [rng.uniform(math.log(0.2), math.log(5.0))],
            sx + rng.uniform(math.log(RANDOM_LS_RANGE[0]), math.log(RANDOM_LS_RANGE[1]), size=p),
            sz + rng.uniform(math.log(RANDOM_LS_RANGE[0]), math.log(RANDOM_LS_RANGE[1]), size=1),
            [rng.uniform(math.log(1e-4), math.log(0.5))],
            sx + rng.uniform(math.log(RANDOM_LS_RANGE[0]), math.log(RANDOM_LS_RANGE[1]), size=p),
        ])

    def component_params(self, theta) -> dict:
        t_rho, t_z, t_delta = self._split(theta)
        return {
            "rho": ArdKernelParams(math.exp(t_rho[0]), np.exp(t_rho[1:])),
            "z": ArdKernelParams(1.0, np.exp(t_z[1:])),
            "delta": ArdKernelParams(math.exp(t_delta[0]), np.exp(t_delta[1:])),
        }

    def describe(self, theta) -> dict:
        return {
            name: {"signal_variance": float(kp.signal_variance),
                   "lengthscales": [float(v) for v in kp.lengthscales]}
            for name, kp in self.component_params(theta).items()
        }


# ---------------------------------------------------------------------------
# Likelihood machinery
# ---------------------------------------------------------------------------

def cholesky_with_jitter(K: np.ndarray, jitter_ladder: Sequence[float] = JITTER_LADDER):
    """Lower Cholesky factor of K + jitter I for the first jitter that succeeds."""
    n = K.shape[0]
    eye = np.eye(n)
    for jitter in jitter_ladder:
        try:
            return cholesky(K + jitter * eye, lower=True, check_finite=False), jitter
        except (LinAlgError, ValueError):
            continue
    raise NotPositiveDefinite(f"Cholesky failed for all jitters in {tuple(jitter_ladder)}")


def _lml_from_chol(L: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    alpha = cho_solve((L, True), y, check_finite=False)
    n = y.shape[0]
    lml = -0.5 * float(y @ alpha) - float(np.log(np.diag(L)).sum()) - 0.5 * n * _LOG_2PI
    return lml, alpha


def _lml_and_grad(kernel, theta_k, noise, X, y, want_grad=True, noise_grad=True):
    """LML and its gradient w.r.t. [theta_k..., log noise] at fixed kernel/noise."""
    if want_grad:
        K, dK = kernel.matrix_and_grads(theta_k, X)
    else:
        K = kernel.matrix(theta_k, X)
    n = K.shape[0]
    L, jitter = cholesky_with_jitter(K + noise * np.eye(n))
    lml, alpha = _lml_from_chol(L, y)
    if not want_grad:
        return lml, None, jitter
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    g = 0.5 * np.einsum("ij,kij->k", W, dK)
    if noise_grad:
        g = np.append(g, 0.5 * noise * np.trace(W))
    return lml, g, jitter


def _as_ard_theta(params: ArdKernelParams, p: int) -> np.ndarray:
    if params.dim != p:
        raise DimensionMismatch(f"kernel has {params.dim} lengthscales but inputs have {p} columns")
    return params.log_theta()


def kernel_eval(params: ArdKernelParams, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.shape[0] != params.dim:
        raise DimensionMismatch(f"inputs {x.shape}, {x2.shape} vs kernel dim {params.dim}")
    r2 = float((((x - x2) / params.lengthscales) ** 2).sum())
    return params.signal_variance * math.exp(-0.5 * r2)


def kernel_matrix(params: ArdKernelParams, X, X2=None) -> np.ndarray:
    X = as_finite_matrix(X)
    X2 = X if X2 is None else as_finite_matrix(X2, "X2")
    theta = _as_ard_theta(params, X.shape[1])
    if X2.shape[1] != X.shape[1]:
        raise DimensionMismatch("X and X2 column counts differ")
    return _ard(theta, X, X2)


def log_marginal_likelihood(X, y, params: ArdKernelParams) -> float:
    """Gaussian log marginal likelihood of y under the ARD-SE kernel (jittered)."""
    X = as_finite_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    theta = _as_ard_theta(params, X.shape[1])
    lml, _, _ = _lml_and_grad(ArdKernel(X.shape[1]), theta, params.noise_variance, X, y,
                              want_grad=False)
    return lml


def lml_gradient(X, y, params: ArdKernelParams) -> np.ndarray:
    """Gradient over [log sf2, log l_1..l_p, log noise]."""
    X = as_finite_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    theta = _as_ard_theta(params, X.shape[1])
    _, g, _ = _lml_and_grad(ArdKernel(X.shape[1]), theta, params.noise_variance, X, y)
    return g


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GPConfig:
    """Hyperparameter search settings.

    ``noise`` is either ``"learn"`` or a fixed variance (in normalized units
    when ``normalize`` is on).
    """

    restarts: int = 10
    seed: int = 0
    bounds: tuple = PARAM_BOUNDS
    noise: Union[str, float] = "learn"
    noise_floor: float = NOISE_FLOOR
    normalize: bool = True
    maxiter: int = 200


@dataclass(frozen=True)
class GPModel:
    """Fitted GP; immutable.  Responses are stored raw, the factorization in
    normalized units ``(y - y_offset) / y_scale``."""

    train_X: np.ndarray
    train_y: np.ndarray
    kernel: object
    theta: np.ndarray
    noise_variance: float
    jitter: float
    chol_K: np.ndarray
    alpha: np.ndarray
    y_offset: float = 0.0
    y_scale: float = 1.0
    lml: float = float("nan")
    restart_lmls: tuple = field(default=(), compare=False)

    @property
    def params(self) -> ArdKernelParams:
        if not isinstance(self.kernel, ArdKernel):
            raise TypeError(f"{self.kernel.name} kernel has no single ARD parameter set")
        return ArdKernelParams(math.exp(self.theta[0]), np.exp(self.theta[1:]), self.noise_variance)

    @property
    def input_dim(self) -> int:
        return self.train_X.shape[1]

    def to_manifest(self) -> dict:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.train_X).tobytes())
        digest.update(np.ascontiguousarray(self.train_y).tobytes())
        return {
            "kernel": self.kernel.name,
            "hyperparameters": self.kernel.describe(self.theta),
            "noise_variance": float(self.noise_variance),
            "jitter": float(self.jitter),
            "y_offset": float(self.y_offset),
            "y_scale": float(self.y_scale),
            "log_marginal_likelihood": float(self.lml),
            "n_train": int(self.train_X.shape[0]),
            "input_dim": int(self.train_X.shape[1]),
            "train_data_sha256": digest.hexdigest(),
        }


def build_model(X, y, kernel, theta, noise, y_offset=0.0, y_scale=1.0, lml=None,
                restart_lmls=()) -> GPModel:
    """Factorize the kernel matrix at fixed hyperparameters."""
    X = as_finite_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    theta = np.array(theta, dtype=float)
    yn = (y - y_offset) / y_scale
    K = kernel.matrix(theta, X)
    n = X.shape[0]
    L, jitter = cholesky_with_jitter(K + noise * np.eye(n))
    value, alpha = _lml_from_chol(L, yn)
    for a in (X, y, theta, L, alpha):
        a.setflags(write=False)
    return GPModel(X, y, kernel, theta, float(noise), float(jitter), L, alpha,
                   float(y_offset), float(y_scale), value if lml is None else lml,
                   tuple(restart_lmls))


class _Objective:
    """Negative LML over a subset of [kernel theta, log noise] with best-seen tracking."""

    def __init__(self, kernel, X, yn, theta_full, free, learn_noise, fixed_noise):
        self.kernel = kernel
        self.X = X
        self.yn = yn
        self.theta_full = np.array(theta_full, dtype=float)
        self.free = np.asarray(free)
        self.learn_noise = learn_noise
        self.fixed_noise = fixed_noise
        self.best_value = -np.inf
        self.best_theta = None

    def full(self, z):
        t = self.theta_full.copy()
        t[self.free] = z
        return t

    def evaluate(self, t):
        nk = self.kernel.n_params
        noise = math.exp(t[nk]) if self.learn_noise else self.fixed_noise
        lml, g, _ = _lml_and_grad(self.kernel, t[:nk], noise, self.X, self.yn,
                                  noise_grad=self.learn_noise)
        return lml, g

    def __call__(self, z):
        t = self.full(z)
        try:
            lml, g = self.evaluate(t)
        except NotPositiveDefinite:
            return 1e25, np.zeros_like(z)
        if not np.isfinite(lml):
            return 1e25, np.zeros_like(z)
        if lml > self.best_value:
            self.best_value = lml
            self.best_theta = t
        return -lml, -g[self.free]


def _normalization(y, normalize):
    if not normalize:
        return 0.0, 1.0
    offset = float(np.mean(y))
    scale = float(np.std(y))
    if not np.isfinite(scale) or scale <= 1e-12 * max(1.0, abs(offset)):
        scale = 1.0
    return offset, scale


def optimize_theta(kernel, X, yn, starts, bounds, free=None, learn_noise=True,
                   fixed_noise=0.0, maxiter=200):
    """Run L-BFGS-B from each start; returns (best theta, best lml, per-start lmls).

    Each start keeps the best point it evaluated, so the result is never worse
    than its initial point.  Ties within 1e-12 go to the earliest start.
    """
    n_total = kernel.n_params + (1 if learn_noise else 0)
    free = np.arange(n_total) if free is None else np.asarray(free)
    best_t, best_v, values = None, -np.inf, []
    for start in starts:
        obj = _Objective(kernel, X, yn, start, free, learn_noise, fixed_noise)
        z0 = np.asarray(start, dtype=float)[free]
        b = [bounds[i] for i in free]
        obj(z0)
        try:
            minimize(obj, z0, jac=True, method="L-BFGS-B", bounds=b,
                     options={"maxiter": maxiter})
        except (ValueError, FloatingPointError) as exc:
            logger.debug("restart failed: %s", exc)
        values.append(obj.best_value)
        if obj.best_theta is not None and obj.best_value > best_v + 1e-12:
            best_t, best_v = obj.best_theta, obj.best_value
    return best_t, best_v, values


def fit_gp(X, y, config: Optional[GPConfig] = None, kernel=None,
           init_theta: Optional[np.ndarray] = None) -> GPModel:
    """Maximum marginal-likelihood GP fit with seeded multistart L-BFGS-B.

    Restart 0 starts at the kernel's heuristic point (or ``init_theta``);
    restart r > 0 draws from a stream seeded by ``(seed, r)``.
    """
    config = config or GPConfig()
    X = as_finite_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    if n < 2:
        raise ValueError("fit_gp needs at least two training points")
    if y.shape[0] != n:
        raise DimensionMismatch("X and y disagree in length")
    kernel = kernel or ArdKernel(p)
    offset, scale = _normalization(y, config.normalize)
    yn = (y - offset) / scale

    learn_noise = config.noise == "learn"
    fixed_noise = 0.0 if learn_noise else float(config.noise)
    bounds = list(kernel.bounds(config.bounds))
    if learn_noise:
        bounds.append((math.log(config.noise_floor), math.log(config.bounds[1])))
    lower = np.array([-np.inf if b[0] is None else b[0] for b in bounds[: kernel.n_params]])
    upper = np.array([np.inf if b[1] is None else b[1] for b in bounds[: kernel.n_params]])

    starts = []
    for r in range(max(1, config.restarts)):
        if r == 0:
            t = kernel.initial_theta(X) if init_theta is None else np.array(init_theta, float)
            noise0 = [math.log(max(1e-6, config.noise_floor))]
        else:
            rng = make_rng([config.seed, r])
            t = kernel.random_theta(rng, X)
            noise0 = [rng.uniform(*np.log(RANDOM_NOISE_RANGE))]
        t = np.clip(t, lower, upper)
        starts.append(np.concatenate([t, noise0]) if learn_noise else t)

    best, best_lml, values = optimize_theta(kernel, X, yn, starts, bounds,
                                            learn_noise=learn_noise, fixed_noise=fixed_noise,
                                            maxiter=config.maxiter)
    if best is None:
        raise OptimizerFailure("no restart produced a finite marginal likelihood")
    theta_k = best[: kernel.n_params]
    noise = math.exp(best[kernel.n_params]) if learn_noise else fixed_noise
    return build_model(X, y, kernel, theta_k, noise, offset, scale, restart_lmls=values)


def predict_normalized(model: GPModel, Xstar: np.ndarray):
    """Latent mean/variance in normalized units; variance not clamped."""
    Ks = model.kernel.matrix(model.theta, Xstar, model.train_X)
    mean = Ks @ model.alpha
    v = solve_triangular(model.chol_K, Ks.T, lower=True, check_finite=False)
    var = model.kernel.diag(model.theta, Xstar) - (v * v).sum(0)
    return mean, var


def predict(model: GPModel, Xstar):
    """Posterior mean and (clamped, non-negative) variance at ``Xstar``."""
    Xstar = as_finite_matrix(Xstar, "Xstar")
    if Xstar.shape[1] != model.input_dim:
        raise DimensionMismatch(f"Xstar has {Xstar.shape[1]} columns, model expects {model.input_dim}")
    mean, var = predict_normalized(model, Xstar)
    return mean * model.y_scale + model.y_offset, np.maximum(var, 0.0) * model.y_scale ** 2
