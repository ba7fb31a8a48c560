"""Datasets, seeded sampling, input standardization and nested fidelity splits."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, SingularCovariance

logger = logging.getLogger(__name__)

#: Identifier of the bit generator behind every seeded draw in the package.
RNG_ALGORITHM = "numpy.random.PCG64"

DEFAULT_RIDGE = 1e-10
FALLBACK_RIDGE = 1e-6


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(seed))


def as_finite_matrix(X, name: str = "X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return X


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class Fidelity(enum.Enum):
    LOW = "low"
    HIGH = "high"
    TEST = "test"


@dataclass(frozen=True)
class Dataset:
    """Input matrix, response vector and fidelity tag.

    ``source_indices`` is set when the rows were taken from a parent dataset
    (the nested high-fidelity subset records its rows in the low set).
    """

    X: np.ndarray
    y: np.ndarray
    fidelity: Fidelity
    source_indices: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        X = as_finite_matrix(self.X)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DimensionMismatch(f"dataset needs n >= 1 and p >= 1, got {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"y has {y.shape[0]} entries but X has {X.shape[0]} rows")
        if not np.all(np.isfinite(y)):
            raise NonFiniteValue("y contains NaN or Inf")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))
        if self.source_indices is not None:
            idx = np.array(self.source_indices, dtype=np.int64, copy=True)
            idx.setflags(write=False)
            object.__setattr__(self, "source_indices", idx)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def to_csv(self, path) -> None:
        """Write ``x1,...,xp,y`` rows with round-trip float precision."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(self.p)] + ["y"])
            for row, yi in zip(self.X, self.y):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(yi))])

    @classmethod
    def from_csv(cls, path, fidelity: Fidelity = Fidelity.HIGH) -> "Dataset":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[-1] != "y":
                raise DimensionMismatch(f"unexpected CSV header {header!r}")
            rows = [[float(v) for v in r] for r in reader if r]
        data = np.array(rows, dtype=float).reshape(-1, len(header))
        return cls(data[:, :-1], data[:, -1], fidelity)


@dataclass(frozen=True)
class Standardizer:
    mu: np.ndarray
    sigma_inv_sqrt: np.ndarray
    ridge: float

    @property
    def p(self) -> int:
        return self.mu.shape[0]


def sample_uniform(n: int, p: int, seed) -> np.ndarray:
    """``n x p`` i.i.d. U[0, 1) draws; bit-identical for identical arguments."""
    if n < 1 or p < 1:
        raise ValueError(f"need n >= 1 and p >= 1, got n={n}, p={p}")
    return make_rng(seed).random((n, p))


def fit_standardizer(X, ridge: float = DEFAULT_RIDGE, escalate: bool = False) -> Standardizer:
    """Sample mean and (Sigma + ridge I)^(-1/2), sample covariance with divisor n - 1.

    With ``escalate`` a singular covariance is retried once at
    ``FALLBACK_RIDGE`` (logged) before giving up.
    """
    X = as_finite_matrix(X)
    n, p = X.shape
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    mu = X.mean(axis=0)
    if n > 1:
        cov = np.atleast_2d(np.cov(X, rowvar=False))
    else:
        cov = np.zeros((p, p))
    while True:
        w, V = np.linalg.eigh(cov + ridge * np.eye(p))
        tol = p * np.finfo(float).eps * max(1.0, float(np.max(np.abs(w))))
        if np.min(w) > tol:
            break
        if escalate and ridge < FALLBACK_RIDGE:
            logger.warning(
                "sample covariance is singular (min eigenvalue %.3g); raising ridge to %g",
                np.min(w), FALLBACK_RIDGE,
            )
            ridge = FALLBACK_RIDGE
            continue
        raise SingularCovariance(
            f"covariance has eigenvalue {np.min(w):.3g} <= {tol:.3g} (n={n}, p={p}, ridge={ridge})"
        )
    inv_sqrt = (V / np.sqrt(w)) @ V.T
    inv_sqrt = 0.5 * (inv_sqrt + inv_sqrt.T)
    return Standardizer(_frozen(mu), _frozen(inv_sqrt), float(ridge))


def standardize(std: Standardizer, X) -> np.ndarray:
    X = as_finite_matrix(X)
    if X.shape[1] != std.p:
        raise DimensionMismatch(f"X has {X.shape[1]} columns, standardizer expects {std.p}")
    return (X - std.mu) @ std.sigma_inv_sqrt


def nested_indices(n_low: int, n_high: int, seed) -> np.ndarray:
    """First ``n_high`` entries of a seeded permutation of ``range(n_low)``.

    Subsets drawn with the same seed are prefixes of one another.
    """
    if not 1 <= n_high <= n_low:
        raise ValueError(f"need 1 <= n_high <= n_low, got n_high={n_high}, n_low={n_low}")
    return make_rng(seed).permutation(n_low)[:n_high]


def make_nested(
    low: Dataset, n_high: int, high_eval: Callable[[np.ndarray], np.ndarray], seed
) -> Dataset:
    """High-fidelity dataset on a seeded random subset of the low-fidelity inputs."""
    idx = nested_indices(low.n, n_high, seed)
    X = low.X[idx]
    return Dataset(X, np.asarray(high_eval(X), dtype=float), Fidelity.HIGH, source_indices=idx)


def pool_indices(n_low: int, taken) -> np.ndarray:
    """Low-fidelity row indices not yet labelled at high fidelity, ascending."""
    mask = np.ones(n_low, dtype=bool)
    mask[np.asarray(taken, dtype=np.int64)] = False
    return np.flatnonzero(mask)
